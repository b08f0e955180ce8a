//! The persistent side of the controller: NVM contents, the ADR write
//! queue in front of it, the durable root register, and simulated time.

use crate::controller::queue::{EntryKind, WriteQueue, WriteQueueEntry};
use crate::crypto::MacTag;
use crate::ledger::{Account, CycleLedger};
use crate::metadata::{DataBlock, NodeId, RootRegister, TreeGeometry, BLOCK_BYTES};
use crate::nvm::{NvmImage, Persist};

#[derive(Clone, Debug)]
pub struct Backend {
    pub nvm: NvmImage,
    pub wq: WriteQueue,
    /// Durable root register. Only ever written from retiring tags.
    pub persisted_root: RootRegister,
    pub ledger: CycleLedger,
    geometry: TreeGeometry,
    now: u64,
    port_free_at: u64,
    /// Time a metadata slot frees up for the background updater. User
    /// writes arriving earlier find the metadata slots full and wait.
    meta_busy_until: u64,
    nvm_write_cycles: u64,
}

impl Backend {
    pub fn new(nvm: NvmImage, wq: WriteQueue, nvm_write_cycles: u64) -> Self {
        let geometry = nvm.geometry;
        Self {
            nvm,
            wq,
            persisted_root: RootRegister::default(),
            ledger: CycleLedger::default(),
            geometry,
            now: 0,
            port_free_at: 0,
            meta_busy_until: 0,
            nvm_write_cycles,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Charges latency. Critical-path charges advance simulated time.
    pub fn charge(&mut self, account: Account, cycles: u64) {
        match account {
            Account::Path => self.now += cycles,
            Account::Background => self.ledger.background_cycles += cycles,
        }
    }

    /// Charges `count` hashes taking `cycles` in total.
    pub fn charge_hashes(&mut self, account: Account, count: u64, cycles: u64) {
        self.ledger.hashes += count;
        match account {
            Account::Path => {
                self.ledger.path_hashes += count;
                self.ledger.path_hash_cycles += cycles;
            }
            Account::Background => self.ledger.background_hashes += count,
        }
        self.charge(account, cycles);
    }

    fn retire(&mut self, entry: WriteQueueEntry) {
        let start = self.port_free_at.max(entry.enqueued_at);
        self.port_free_at = start + self.nvm_write_cycles;
        self.nvm.apply(&entry.persist);
        if let Some(tag) = entry.tag {
            let leaf = self.geometry.leaf_of(entry.addr);
            self.persisted_root.counters[self.geometry.octant_of_leaf(leaf)] = tag;
        }
    }

    /// Retires every entry the write port has finished by time `t`.
    pub fn retire_until(&mut self, t: u64) {
        while let Some(head) = self.wq.oldest() {
            let start = self.port_free_at.max(head.enqueued_at);
            if start + self.nvm_write_cycles > t {
                break;
            }
            let entry = self.wq.pop_oldest().unwrap();
            self.retire(entry);
        }
    }

    /// Blocks until a slot of `kind` is free; returns the stall in cycles.
    ///
    /// A background stall does not move the clock. It holds the metadata
    /// slots until the freed slot's write completes, and the next user write
    /// waits for that.
    fn ensure_slot(&mut self, kind: EntryKind, account: Account) -> u64 {
        let full = |wq: &WriteQueue| match kind {
            EntryKind::UserData => wq.user_full(),
            EntryKind::Metadata => wq.meta_full(),
        };
        if !full(&self.wq) {
            return 0;
        }
        while full(&self.wq) {
            let entry = self.wq.pop_oldest().expect("full queue has entries");
            self.retire(entry);
        }
        let stall = self.port_free_at.saturating_sub(self.now);
        if stall > 0 {
            self.ledger.stalls += 1;
            self.ledger.stall_cycles += stall;
            match account {
                Account::Path => self.now += stall,
                Account::Background => {
                    self.ledger.background_cycles += stall;
                    self.meta_busy_until = self.meta_busy_until.max(self.port_free_at);
                }
            }
        }
        stall
    }

    /// Appends an entry, stalling `account` when its slot class is full.
    pub fn enqueue(&mut self, entry: WriteQueueEntry, account: Account) -> u64 {
        let stall = self.ensure_slot(entry.kind, account);
        match entry.kind {
            EntryKind::UserData => self.ledger.user_writes += 1,
            EntryKind::Metadata => self.ledger.meta_writes += 1,
        }
        self.wq.push(entry, self.now);
        stall
    }

    /// Ensures a user slot is free before a tag is taken.
    pub fn reserve_user_slot(&mut self, account: Account) -> u64 {
        let mut stall = 0;
        if account == Account::Path && self.meta_busy_until > self.now {
            stall = self.meta_busy_until - self.now;
            self.ledger.stalls += 1;
            self.ledger.meta_full_stalls += 1;
            self.ledger.stall_cycles += stall;
            self.now += stall;
        }
        stall + self.ensure_slot(EntryKind::UserData, account)
    }

    /// Current ciphertext and MAC of a data block, forwarding from the queue.
    pub fn lookup_data(&self, block: u64) -> Option<(DataBlock, MacTag)> {
        let queued = self.wq.newest_matching(|p| matches!(p, Persist::Data { block: b, .. } if *b == block));
        if let Some(Persist::Data { ciphertext, mac, .. }) = queued {
            return Some((*ciphertext, *mac));
        }
        let ct = self.nvm.data.get(&block)?;
        Some((*ct, self.nvm.data_macs.get(&block).copied().unwrap_or_default()))
    }

    /// Stored counter block bytes and leaf MAC, forwarding from the queue.
    pub fn lookup_counter(&self, leaf: u64) -> Option<(Vec<u8>, MacTag)> {
        let queued = self.wq.newest_matching(|p| matches!(p, Persist::Counter { leaf: l, .. } if *l == leaf));
        if let Some(Persist::Counter { bytes, mac, .. }) = queued {
            return Some((bytes.clone(), *mac));
        }
        let bytes = self.nvm.counters.get(&leaf)?;
        Some((bytes.clone(), self.nvm.leaf_macs.get(&leaf).copied().unwrap_or_default()))
    }

    pub fn lookup_node(&self, node: NodeId) -> Option<[u8; BLOCK_BYTES]> {
        let queued = self.wq.newest_matching(|p| matches!(p, Persist::Node { node: n, .. } if *n == node));
        if let Some(Persist::Node { bytes, .. }) = queued {
            return Some(*bytes);
        }
        self.nvm.tree.get(&node).copied()
    }

    /// What survives a power failure right now: the NVM plus every queued
    /// entry drained in FIFO order, with each drained tag overwriting its
    /// octant in the root register.
    pub fn crash_image(&self) -> (NvmImage, RootRegister) {
        let mut nvm = self.nvm.clone();
        let mut root = self.persisted_root;
        let mut wq = self.wq.clone();
        for entry in wq.drain_all() {
            nvm.apply(&entry.persist);
            if let Some(tag) = entry.tag {
                let leaf = self.geometry.leaf_of(entry.addr);
                root.counters[self.geometry.octant_of_leaf(leaf)] = tag;
            }
        }
        (nvm, root)
    }
}
