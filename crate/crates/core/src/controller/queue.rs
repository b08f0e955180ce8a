//! ADR-protected write queue with root-counter tags.
//!
//! User-data entries occupy the tagged slots. Each tag holds the root
//! counter value that becomes durable together with the entry. Metadata
//! entries (evicted counter blocks and tree nodes) use the untagged slots.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::metadata::Address;
use crate::nvm::Persist;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    UserData,
    Metadata,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteQueueEntry {
    pub kind: EntryKind,
    pub addr: Address,
    pub persist: Persist,
    /// Root-counter value, present iff `kind == UserData`.
    pub tag: Option<u64>,
    pub(crate) seq: u64,
    pub(crate) enqueued_at: u64,
}

impl WriteQueueEntry {
    pub fn user(addr: Address, persist: Persist, tag: u64) -> Self {
        Self { kind: EntryKind::UserData, addr, persist, tag: Some(tag), seq: 0, enqueued_at: 0 }
    }

    pub fn metadata(addr: Address, persist: Persist) -> Self {
        Self { kind: EntryKind::Metadata, addr, persist, tag: None, seq: 0, enqueued_at: 0 }
    }
}

/// Outcome of asking the queue for a tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagGrant {
    pub tag: u64,
    /// The prepared tags were for another octant (or stale) and had to be
    /// rebuilt before the entry could be accepted.
    pub refilled: bool,
}

#[derive(Clone, Debug)]
pub struct WriteQueue {
    user: VecDeque<WriteQueueEntry>,
    meta: VecDeque<WriteQueueEntry>,
    user_capacity: usize,
    meta_capacity: usize,
    predicted_octant: Option<usize>,
    prepared: VecDeque<u64>,
    next_seq: u64,
}

impl WriteQueue {
    pub fn new(user_capacity: usize, meta_capacity: usize) -> Self {
        Self {
            user: VecDeque::with_capacity(user_capacity),
            meta: VecDeque::with_capacity(meta_capacity),
            user_capacity,
            meta_capacity,
            predicted_octant: None,
            prepared: VecDeque::new(),
            next_seq: 0,
        }
    }

    pub fn user_len(&self) -> usize {
        self.user.len()
    }

    pub fn meta_len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user.is_empty() && self.meta.is_empty()
    }

    pub fn user_full(&self) -> bool {
        self.user.len() >= self.user_capacity
    }

    pub fn meta_full(&self) -> bool {
        self.meta.len() >= self.meta_capacity
    }

    pub fn free_user_slots(&self) -> usize {
        self.user_capacity - self.user.len()
    }

    pub fn predicted_octant(&self) -> Option<usize> {
        self.predicted_octant
    }

    pub fn prepared_tags(&self) -> impl Iterator<Item = u64> + '_ {
        self.prepared.iter().copied()
    }

    /// Prepares `base+1, base+2, ...` for every free user slot.
    pub fn prefill_tags(&mut self, octant: usize, base: u64) {
        self.predicted_octant = Some(octant);
        self.prepared.clear();
        self.prepared.extend((1..=self.free_user_slots() as u64).map(|i| base + i));
    }

    /// Tops the prepared tags back up to the number of free slots, continuing
    /// the sequence. `root_now` is the live root counter of the predicted
    /// octant, used when every prepared tag has been consumed.
    pub fn top_up(&mut self, root_now: u64) {
        if self.predicted_octant.is_none() {
            return;
        }
        while self.prepared.len() < self.free_user_slots() {
            let next = self.prepared.back().map_or(root_now + 1, |&t| t + 1);
            self.prepared.push_back(next);
        }
    }

    /// Drops the prediction; the next tagged enqueue refills.
    pub fn invalidate_prediction(&mut self) {
        self.predicted_octant = None;
        self.prepared.clear();
    }

    /// Takes the tag for a user write whose root counter for `octant` has just
    /// become `new_root`.
    ///
    /// A matching octant consumes the head of the prepared tags, which must
    /// equal `new_root`. Any other octant clears the prepared tags and
    /// rebuilds them from `new_root`.
    pub fn take_tag(&mut self, octant: usize, new_root: u64) -> Result<TagGrant> {
        if self.predicted_octant == Some(octant) {
            if let Some(&head) = self.prepared.front() {
                if head != new_root {
                    return Err(Error::TagMismatch { tag: head, root: new_root });
                }
                self.prepared.pop_front();
                return Ok(TagGrant { tag: head, refilled: false });
            }
        }
        self.prefill_tags(octant, new_root - 1);
        let tag = self.prepared.pop_front().unwrap_or(new_root);
        Ok(TagGrant { tag, refilled: true })
    }

    /// Appends an entry. The caller guarantees a free slot of the right class.
    pub fn push(&mut self, mut entry: WriteQueueEntry, now: u64) {
        debug_assert_eq!(entry.tag.is_some(), entry.kind == EntryKind::UserData);
        entry.seq = self.next_seq;
        entry.enqueued_at = now;
        self.next_seq += 1;
        match entry.kind {
            EntryKind::UserData => {
                assert!(!self.user_full(), "user slots full");
                self.user.push_back(entry);
            }
            EntryKind::Metadata => {
                assert!(!self.meta_full(), "metadata slots full");
                self.meta.push_back(entry);
            }
        }
    }

    /// Oldest entry across both slot classes.
    pub fn oldest(&self) -> Option<&WriteQueueEntry> {
        match (self.user.front(), self.meta.front()) {
            (Some(u), Some(m)) => Some(if u.seq < m.seq { u } else { m }),
            (u, m) => u.or(m),
        }
    }

    /// Oldest entry of one class.
    pub fn oldest_of(&self, kind: EntryKind) -> Option<&WriteQueueEntry> {
        match kind {
            EntryKind::UserData => self.user.front(),
            EntryKind::Metadata => self.meta.front(),
        }
    }

    pub fn pop_oldest(&mut self) -> Option<WriteQueueEntry> {
        let take_user = match (self.user.front(), self.meta.front()) {
            (Some(u), Some(m)) => u.seq < m.seq,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return None,
        };
        if take_user {
            self.user.pop_front()
        } else {
            self.meta.pop_front()
        }
    }

    /// Removes every entry in FIFO order.
    pub fn drain_all(&mut self) -> Vec<WriteQueueEntry> {
        let mut out = Vec::with_capacity(self.user.len() + self.meta.len());
        while let Some(e) = self.pop_oldest() {
            out.push(e);
        }
        out
    }

    /// Newest queued persist matching `pred`, for read forwarding.
    pub fn newest_matching(&self, pred: impl Fn(&Persist) -> bool) -> Option<&Persist> {
        self.user
            .iter()
            .chain(self.meta.iter())
            .filter(|e| pred(&e.persist))
            .max_by_key(|e| e.seq)
            .map(|e| &e.persist)
    }

    pub fn entries(&self) -> impl Iterator<Item = &WriteQueueEntry> {
        self.user.iter().chain(self.meta.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MacTag;
    use crate::metadata::DataBlock;

    fn user_entry(tag: u64) -> WriteQueueEntry {
        let persist = Persist::Data { block: 0, ciphertext: DataBlock::ZERO, mac: MacTag(0) };
        WriteQueueEntry::user(Address::new(0), persist, tag)
    }

    #[test]
    fn prefill_covers_free_slots() {
        let mut q = WriteQueue::new(64, 10);
        q.prefill_tags(0, 0);
        assert_eq!(q.prepared_tags().collect::<Vec<_>>(), (1..=64).collect::<Vec<_>>());

        let mut q = WriteQueue::new(3, 10);
        q.prefill_tags(2, 41);
        assert_eq!(q.prepared_tags().collect::<Vec<_>>(), vec![42, 43, 44]);
    }

    // Replay: ten same-octant writes from root n take n+1..=n+10 with one
    // initial refill and no further stalls.
    #[test]
    fn same_octant_stream_consumes_in_order() {
        let mut q = WriteQueue::new(64, 10);
        let n = 17;
        q.prefill_tags(3, n);
        let mut refills = 0;
        for i in 1..=10 {
            let g = q.take_tag(3, n + i).unwrap();
            assert_eq!(g.tag, n + i);
            refills += g.refilled as u32;
            q.push(user_entry(g.tag), 0);
        }
        assert_eq!(refills, 0);
    }

    #[test]
    fn octant_switch_refills_once() {
        let mut q = WriteQueue::new(64, 10);
        q.prefill_tags(0, 0);
        let mut refills = 0;
        for (oct, root) in [(0, 1), (0, 2), (5, 9), (5, 10), (5, 11)] {
            let g = q.take_tag(oct, root).unwrap();
            assert_eq!(g.tag, root);
            refills += g.refilled as u32;
        }
        assert_eq!(refills, 1);
        assert_eq!(q.predicted_octant(), Some(5));
    }

    #[test]
    fn metadata_bypasses_tags() {
        let mut q = WriteQueue::new(4, 2);
        q.prefill_tags(1, 5);
        let before: Vec<_> = q.prepared_tags().collect();
        let p = Persist::Node { node: crate::metadata::NodeId::new(1, 0), bytes: [0; 64] };
        q.push(WriteQueueEntry::metadata(Address::new(0), p), 0);
        assert_eq!(q.prepared_tags().collect::<Vec<_>>(), before);
        assert_eq!(q.predicted_octant(), Some(1));
    }

    #[test]
    fn mismatched_head_is_an_error() {
        let mut q = WriteQueue::new(4, 2);
        q.prefill_tags(1, 5);
        assert_eq!(q.take_tag(1, 9), Err(Error::TagMismatch { tag: 6, root: 9 }));
    }

    #[test]
    fn fifo_across_classes() {
        let mut q = WriteQueue::new(4, 2);
        q.push(user_entry(1), 0);
        let p = Persist::Node { node: crate::metadata::NodeId::new(1, 0), bytes: [0; 64] };
        q.push(WriteQueueEntry::metadata(Address::new(0), p), 0);
        q.push(user_entry(2), 0);
        let order: Vec<_> = q.drain_all().into_iter().map(|e| e.tag).collect();
        assert_eq!(order, vec![Some(1), None, Some(2)]);
    }
}
