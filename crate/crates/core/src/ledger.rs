use serde::Serialize;

/// Who pays for a piece of work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Account {
    /// The request's critical path.
    Path,
    /// Deferred work: background branch updates, eviction write-backs,
    /// overflow re-encryption bursts.
    Background,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
}

/// Cycle and event accounting for one simulation run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CycleLedger {
    /// Critical-path cycles of every completed op, in order.
    pub op_cycles: Vec<u64>,
    pub op_kinds: Vec<OpKind>,
    pub total_cycles: u64,
    pub writes: u64,
    pub reads: u64,
    pub write_cycles: u64,
    pub read_cycles: u64,

    pub hashes: u64,
    pub path_hashes: u64,
    pub path_hash_cycles: u64,
    pub background_hashes: u64,

    /// Intermediate tree nodes fetched on the critical path.
    pub tree_node_reads: u64,
    /// Counter blocks fetched on the critical path.
    pub counter_reads: u64,
    pub background_node_reads: u64,
    pub background_counter_reads: u64,
    pub background_cycles: u64,

    pub user_writes: u64,
    pub meta_writes: u64,
    pub stalls: u64,
    pub stall_cycles: u64,
    /// User writes held back because background work filled the metadata
    /// slots.
    pub meta_full_stalls: u64,
    pub tag_refills: u64,

    pub dirty_evictions: u64,
    pub dummy_counter_evictions: u64,
    /// Evictions where the dummy counter disagreed with a cached parent.
    pub dummy_mismatches: u64,
    pub forced_jobs: u64,
    pub background_jobs: u64,
    pub overflows: u64,
    pub reencrypted_blocks: u64,
    pub stop_loss_persists: u64,
}

impl CycleLedger {
    pub fn record_op(&mut self, kind: OpKind, cycles: u64) {
        self.op_cycles.push(cycles);
        self.op_kinds.push(kind);
        self.total_cycles += cycles;
        match kind {
            OpKind::Read => {
                self.reads += 1;
                self.read_cycles += cycles;
            }
            OpKind::Write => {
                self.writes += 1;
                self.write_cycles += cycles;
            }
        }
    }

    pub fn avg_write_latency(&self) -> f64 {
        ratio(self.write_cycles, self.writes)
    }

    pub fn avg_read_latency(&self) -> f64 {
        ratio(self.read_cycles, self.reads)
    }

    /// Share of NVM writes that carry security metadata.
    pub fn metadata_write_fraction(&self) -> f64 {
        ratio(self.meta_writes, self.meta_writes + self.user_writes)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_conserved() {
        let mut l = CycleLedger::default();
        l.record_op(OpKind::Write, 10);
        l.record_op(OpKind::Read, 7);
        l.record_op(OpKind::Write, 30);
        assert_eq!(l.total_cycles, l.op_cycles.iter().sum::<u64>());
        assert_eq!(l.avg_write_latency(), 20.0);
        assert_eq!(l.avg_read_latency(), 7.0);
        assert_eq!(CycleLedger::default().metadata_write_fraction(), 0.0);
    }
}
