//! Set-associative LRU cache keyed by 64-byte line number.

#[derive(Clone, Debug)]
struct Line<V> {
    line: u64,
    value: V,
    dirty: bool,
    last_use: u64,
}

/// A line pushed out by [`SetAssocCache::insert`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evicted<V> {
    pub line: u64,
    pub value: V,
    pub dirty: bool,
}

#[derive(Clone, Debug)]
pub struct SetAssocCache<V> {
    sets: Vec<Vec<Line<V>>>,
    ways: usize,
    clock: u64,
    hits: u64,
    misses: u64,
}

impl<V> SetAssocCache<V> {
    pub fn new(lines: usize, ways: usize) -> Self {
        assert!(ways > 0 && lines >= ways && lines % ways == 0, "bad cache geometry");
        let sets = lines / ways;
        Self { sets: (0..sets).map(|_| Vec::with_capacity(ways)).collect(), ways, clock: 0, hits: 0, misses: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.sets.len() * self.ways
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    fn position(&self, line: u64) -> Option<(usize, usize)> {
        let set = self.set_of(line);
        self.sets[set].iter().position(|l| l.line == line).map(|way| (set, way))
    }

    /// Looks a line up, updating LRU state and the hit/miss statistics.
    pub fn access(&mut self, line: u64) -> bool {
        self.clock += 1;
        match self.position(line) {
            Some((set, way)) => {
                self.sets[set][way].last_use = self.clock;
                self.hits += 1;
                true
            }
            None => {
                self.misses += 1;
                false
            }
        }
    }

    pub fn contains(&self, line: u64) -> bool {
        self.position(line).is_some()
    }

    /// Read access without touching LRU order or statistics.
    pub fn peek(&self, line: u64) -> Option<&V> {
        self.position(line).map(|(s, w)| &self.sets[s][w].value)
    }

    /// Mutable access; marks the line dirty and most recently used.
    pub fn get_mut(&mut self, line: u64) -> Option<&mut V> {
        self.clock += 1;
        let clock = self.clock;
        let (s, w) = self.position(line)?;
        let l = &mut self.sets[s][w];
        l.dirty = true;
        l.last_use = clock;
        Some(&mut l.value)
    }

    pub fn is_dirty(&self, line: u64) -> bool {
        self.position(line).is_some_and(|(s, w)| self.sets[s][w].dirty)
    }

    pub fn mark_clean(&mut self, line: u64) {
        if let Some((s, w)) = self.position(line) {
            self.sets[s][w].dirty = false;
        }
    }

    /// Victim that [`insert`](Self::insert) would choose for `line`, skipping
    /// pinned lines. `None` if the set has a free way or `line` is resident.
    pub fn victim_for(&self, line: u64, pinned: &[u64]) -> Option<u64> {
        let set = &self.sets[self.set_of(line)];
        if set.len() < self.ways || set.iter().any(|l| l.line == line) {
            return None;
        }
        set.iter()
            .filter(|l| !pinned.contains(&l.line))
            .min_by_key(|l| l.last_use)
            .map(|l| l.line)
    }

    /// Inserts a line as most recently used. When the set is full the least
    /// recently used line not listed in `pinned` is evicted and returned.
    ///
    /// # Panics
    ///
    /// Panics if every way of the set is pinned.
    pub fn insert(&mut self, line: u64, value: V, dirty: bool, pinned: &[u64]) -> Option<Evicted<V>> {
        self.clock += 1;
        let clock = self.clock;
        if let Some((s, w)) = self.position(line) {
            let l = &mut self.sets[s][w];
            l.value = value;
            l.dirty |= dirty;
            l.last_use = clock;
            return None;
        }
        let ways = self.ways;
        let set_idx = self.set_of(line);
        let set = &mut self.sets[set_idx];
        let evicted = if set.len() == ways {
            let way = set
                .iter()
                .enumerate()
                .filter(|(_, l)| !pinned.contains(&l.line))
                .min_by_key(|(_, l)| l.last_use)
                .map(|(i, _)| i)
                .expect("every way in the set is pinned");
            let old = set.swap_remove(way);
            Some(Evicted { line: old.line, value: old.value, dirty: old.dirty })
        } else {
            None
        };
        set.push(Line { line, value, dirty, last_use: clock });
        evicted
    }

    pub fn remove(&mut self, line: u64) -> Option<Evicted<V>> {
        let (s, w) = self.position(line)?;
        let old = self.sets[s].swap_remove(w);
        Some(Evicted { line: old.line, value: old.value, dirty: old.dirty })
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &V, bool)> {
        self.sets.iter().flatten().map(|l| (l.line, &l.value, l.dirty))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;

    #[test]
    fn repeated_access_hits() {
        let mut c = SetAssocCache::new(64, 8);
        assert!(!c.access(5));
        c.insert(5, (), false, &[]);
        assert!(c.access(5));
        assert!(c.access(5));
        assert_eq!((c.hits(), c.misses()), (2, 1));
    }

    #[test]
    fn pigeonhole_eviction() {
        let mut c = SetAssocCache::new(4096, 8);
        let evictions = (0..4097u64).filter_map(|l| c.insert(l, (), false, &[])).count();
        assert!(evictions >= 1);
        assert_eq!(c.len(), 4096);
    }

    #[test]
    fn pinned_lines_survive() {
        let mut c = SetAssocCache::new(2, 2);
        c.insert(0, 'a', true, &[]);
        c.insert(2, 'b', false, &[]);
        let ev = c.insert(4, 'c', false, &[0]).unwrap();
        assert_eq!(ev, Evicted { line: 2, value: 'b', dirty: false });
        assert!(c.contains(0));
    }

    /// Independent reference: one fully-ordered recency list per set.
    struct ReferenceLru {
        sets: Vec<VecDeque<u64>>,
        ways: usize,
    }

    impl ReferenceLru {
        fn access(&mut self, line: u64) -> bool {
            let n = self.sets.len() as u64;
            let set = &mut self.sets[(line % n) as usize];
            if let Some(p) = set.iter().position(|&l| l == line) {
                set.remove(p);
                set.push_back(line);
                true
            } else {
                if set.len() == self.ways {
                    set.pop_front();
                }
                set.push_back(line);
                false
            }
        }
    }

    #[test]
    fn matches_reference_lru() {
        let mut c = SetAssocCache::new(256, 8);
        let mut r = ReferenceLru { sets: vec![VecDeque::new(); 32], ways: 8 };
        let mut ref_hits = 0;
        // sequential scan with periodic re-touch of a hot region
        let trace: Vec<u64> = (0..20_000u64).map(|i| if i % 7 == 0 { i % 50 } else { i % 600 }).collect();
        for &line in &trace {
            if !c.access(line) {
                c.insert(line, (), false, &[]);
            }
            if r.access(line) {
                ref_hits += 1;
            }
        }
        assert_eq!(c.hits(), ref_hits);
    }
}
