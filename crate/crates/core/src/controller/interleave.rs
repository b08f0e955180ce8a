//! Exhaustive interleavings of concurrent tagged enqueues.
//!
//! Writer threads each perform some number of enqueues into one octant. The
//! naive model reads the root, writes it back incremented and fills the tag
//! as three separate steps. The pre-update model claims a queue slot whose
//! tag was prepared in advance, then fills the slot's data.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagModel {
    Naive,
    PreUpdate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    ReadRoot,
    WriteRoot,
    Enqueue,
    Claim,
    Fill,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    /// Thread id per scheduled step.
    pub schedule: Vec<usize>,
    /// Tags in queue (drain) order.
    pub tags: Vec<u64>,
    /// Root register after the queue drains.
    pub drained_root: u64,
}

impl Outcome {
    pub fn has_duplicates(&self) -> bool {
        let mut t = self.tags.clone();
        t.sort_unstable();
        t.windows(2).any(|w| w[0] == w[1])
    }

    /// Tags are exactly `base+1 ..= base+n` in queue order and the drained
    /// root counts every write.
    pub fn is_correct(&self, base: u64) -> bool {
        let n = self.tags.len() as u64;
        self.tags.iter().copied().eq(base + 1..=base + n) && self.drained_root == base + n
    }
}

#[derive(Clone)]
struct State {
    pc: Vec<usize>,
    local: Vec<u64>,
    root: u64,
    prepared: u64,
    queue: Vec<u64>,
    schedule: Vec<usize>,
}

fn program(model: TagModel, enqueues: usize) -> Vec<Step> {
    let one: &[Step] = match model {
        TagModel::Naive => &[Step::ReadRoot, Step::WriteRoot, Step::Enqueue],
        TagModel::PreUpdate => &[Step::Claim, Step::Fill],
    };
    one.iter().copied().cycle().take(one.len() * enqueues).collect()
}

/// Every interleaving of the threads' steps, with its outcome.
pub fn enumerate(model: TagModel, enqueues_per_thread: &[usize], base_root: u64) -> Vec<Outcome> {
    let programs: Vec<Vec<Step>> = enqueues_per_thread.iter().map(|&n| program(model, n)).collect();
    let threads = programs.len();
    let start = State {
        pc: vec![0; threads],
        local: vec![0; threads],
        root: base_root,
        prepared: base_root,
        queue: Vec::new(),
        schedule: Vec::new(),
    };
    let mut out = Vec::new();
    explore(&programs, start, &mut out);
    out
}

fn explore(programs: &[Vec<Step>], state: State, out: &mut Vec<Outcome>) {
    let runnable: Vec<usize> = (0..programs.len()).filter(|&t| state.pc[t] < programs[t].len()).collect();
    if runnable.is_empty() {
        out.push(Outcome {
            schedule: state.schedule,
            drained_root: state.queue.last().copied().unwrap_or(state.root),
            tags: state.queue,
        });
        return;
    }
    for t in runnable {
        let mut s = state.clone();
        match programs[t][s.pc[t]] {
            Step::ReadRoot => s.local[t] = s.root,
            Step::WriteRoot => s.root = s.local[t] + 1,
            Step::Enqueue => s.queue.push(s.local[t] + 1),
            Step::Claim => {
                s.prepared += 1;
                s.root += 1;
                s.queue.push(s.prepared);
            }
            Step::Fill => {}
        }
        s.pc[t] += 1;
        s.schedule.push(t);
        explore(programs, s, out);
    }
}
