//! The secure memory controller: counter-mode encryption, data MACs, the
//! metadata cache and integrity tree, and the tagged write queue.

pub mod backend;
pub mod interleave;
pub mod queue;

use crate::config::{Config, UpdateScheme};
use crate::crypto::{data_mac, gen_otp, xor_cipher, SecretKey};
use crate::error::{Error, Result};
use crate::ledger::{Account, CycleLedger, OpKind};
use crate::metadata::{Address, CounterBlock, DataBlock, NodeId, RootRegister, TreeGeometry, BLOCKS_PER_COUNTER};
use crate::nvm::{NvmImage, Persist};
use crate::tree::IntegrityTree;
use crate::workloads::{Trace, TraceOp};

pub use backend::Backend;
pub use queue::{EntryKind, TagGrant, WriteQueue, WriteQueueEntry};

/// A write whose root update is done but whose entry is not yet queued.
#[derive(Clone, Debug)]
pub struct PreparedWrite {
    entry: WriteQueueEntry,
    leaf: u64,
    slot: usize,
    start: u64,
    overflowed: bool,
}

#[derive(Clone, Debug)]
pub struct Controller {
    config: Config,
    geometry: TreeGeometry,
    key: SecretKey,
    tree: IntegrityTree,
    be: Backend,
    events: u64,
}

impl Controller {
    pub fn new(config: Config) -> Result<Self> {
        let geometry = config.validate()?;
        let key = SecretKey::from_seed(config.seed);
        let tree = IntegrityTree::new(&config, geometry, key);
        let nvm = NvmImage::new(geometry, config.minor_bits, config.scheme, config.fingerprint());
        let wq = WriteQueue::new(config.wq_user, config.wq_meta);
        let mut be = Backend::new(nvm, wq, config.nvm_write_cycles);
        be.persisted_root = *tree.root();
        Ok(Self { config, geometry, key, tree, be, events: 0 })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn geometry(&self) -> &TreeGeometry {
        &self.geometry
    }

    pub fn key(&self) -> &SecretKey {
        &self.key
    }

    pub fn tree(&self) -> &IntegrityTree {
        &self.tree
    }

    pub fn backend(&self) -> &Backend {
        &self.be
    }

    pub fn ledger(&self) -> &CycleLedger {
        &self.be.ledger
    }

    /// Live root register.
    pub fn root(&self) -> &RootRegister {
        self.tree.root()
    }

    pub fn persisted_root(&self) -> &RootRegister {
        &self.be.persisted_root
    }

    /// Number of completed operations, i.e. crash points passed.
    pub fn events(&self) -> u64 {
        self.events
    }

    fn begin_op(&mut self, forcing_leaf: Option<u64>) -> Result<u64> {
        let start = self.be.now();
        self.tree.drain_pending(&mut self.be, forcing_leaf)?;
        self.be.retire_until(self.be.now());
        Ok(start)
    }

    fn end_op(&mut self, kind: OpKind, start: u64) -> u64 {
        self.tree.unpin_all();
        if let Some(oct) = self.be.wq.predicted_octant() {
            let root_now = self.tree.root().counters[oct];
            self.be.wq.top_up(root_now);
        }
        let cycles = self.be.now() - start;
        self.be.ledger.record_op(kind, cycles);
        self.events += 1;
        cycles
    }

    fn check(&self, addr: Address) -> Result<()> {
        self.geometry.check_address(addr)
    }

    /// Writes one block. Returns critical-path cycles.
    pub fn write(&mut self, addr: Address, data: &DataBlock) -> Result<u64> {
        let prepared = self.prepare_write(addr, data)?;
        self.commit_write(prepared)
    }

    /// First half of a write: everything up to and including the root
    /// update and tag. A crash before [`Controller::commit_write`] loses the
    /// write entirely.
    pub fn prepare_write(&mut self, addr: Address, data: &DataBlock) -> Result<PreparedWrite> {
        self.check(addr)?;
        let start = self.begin_op(None)?;
        let leaf = self.geometry.leaf_of(addr);
        let slot = addr.counter_slot();
        let octant = self.geometry.octant_of_leaf(leaf);

        self.tree.load_counter_block(&mut self.be, leaf)?;
        self.tree.pin_leaf(leaf);
        let before = self.tree.counter_block(leaf).unwrap().clone();
        let overflowed = self.tree.counter_block_mut(leaf).increment_minor(slot);
        let after = self.tree.counter_block(leaf).unwrap().clone();

        let ciphertext = xor_cipher(data, &gen_otp(&self.key, addr, after.major, after.minors[slot]));
        let mac = data_mac(&self.key, addr, &ciphertext, after.major, after.minors[slot]);
        self.be.charge_hashes(Account::Path, 1, self.config.hash_cycles);
        let persist = Persist::Data { block: addr.block_index(), ciphertext, mac };

        let tag = if overflowed {
            if self.config.scheme.counts_in_root() {
                self.tree.overflow_resync(&mut self.be, leaf, before.leaf_sum(), after.leaf_sum())?;
            } else {
                self.be.ledger.overflows += 1;
                self.tree.update(&mut self.be, leaf)?;
            }
            self.reencrypt_region(leaf, slot, &before, &after)?;
            self.be.wq.invalidate_prediction();
            self.be.reserve_user_slot(Account::Path);
            self.tree.root().counters[octant]
        } else {
            self.tree.update(&mut self.be, leaf)?;
            self.be.reserve_user_slot(Account::Path);
            let root_now = self.tree.root().counters[octant];
            if self.config.scheme.counts_in_root() {
                let grant = self.be.wq.take_tag(octant, root_now)?;
                if grant.refilled {
                    self.be.ledger.tag_refills += 1;
                    self.be.charge(Account::Path, self.config.tag_refill_cycles);
                }
                grant.tag
            } else {
                root_now
            }
        };
        let entry = WriteQueueEntry::user(addr, persist, tag);
        Ok(PreparedWrite { entry, leaf, slot, start, overflowed })
    }

    /// Second half of a write: queue the entry with its tag.
    pub fn commit_write(&mut self, prepared: PreparedWrite) -> Result<u64> {
        let PreparedWrite { entry, leaf, slot, start, overflowed } = prepared;
        self.be.enqueue(entry, Account::Path);
        if overflowed {
            self.tree.persist_leaf_now(&mut self.be, leaf, Account::Background)?;
        } else if self.config.osiris_stop_loss {
            let current = self.tree.counter_block(leaf).unwrap().minors[slot];
            let stored = self.tree.persisted_block(leaf).minors[slot];
            if current.saturating_sub(stored) >= self.config.osiris_limit {
                self.be.ledger.stop_loss_persists += 1;
                self.tree.persist_leaf_now(&mut self.be, leaf, Account::Background)?;
            }
        }
        Ok(self.end_op(OpKind::Write, start))
    }

    /// Re-encrypts every written block of an overflowed region under the new
    /// major counter, as an off-path burst.
    fn reencrypt_region(&mut self, leaf: u64, skip: usize, before: &CounterBlock, after: &CounterBlock) -> Result<()> {
        let first = leaf * BLOCKS_PER_COUNTER as u64;
        for j in (0..BLOCKS_PER_COUNTER).filter(|&j| j != skip) {
            let addr = Address::from_block_index(first + j as u64);
            let Some((ct, stored_mac)) = self.be.lookup_data(addr.block_index()) else {
                continue;
            };
            let (major, minor) = (before.major, before.minors[j]);
            if data_mac(&self.key, addr, &ct, major, minor) != stored_mac {
                return Err(Error::DataMacMismatch(addr));
            }
            let plain = xor_cipher(&ct, &gen_otp(&self.key, addr, major, minor));
            let ciphertext = xor_cipher(&plain, &gen_otp(&self.key, addr, after.major, after.minors[j]));
            let mac = data_mac(&self.key, addr, &ciphertext, after.major, after.minors[j]);
            self.be.charge(Account::Background, self.config.nvm_read_cycles + 2 * self.config.otp_cycles);
            self.be.charge_hashes(Account::Background, 2, 2 * self.config.hash_cycles);
            self.be.ledger.reencrypted_blocks += 1;
            let tag = self.tree.root().counters[self.geometry.octant_of_leaf(leaf)];
            let persist = Persist::Data { block: addr.block_index(), ciphertext, mac };
            self.be.enqueue(WriteQueueEntry::user(addr, persist, tag), Account::Background);
        }
        Ok(())
    }

    /// Reads one block, verifying its MAC. Returns plaintext and cycles.
    pub fn read(&mut self, addr: Address) -> Result<(DataBlock, u64)> {
        self.check(addr)?;
        let leaf = self.geometry.leaf_of(addr);
        let cached = self.tree.cached(NodeId::leaf(leaf)).is_some();
        let start = self.begin_op(if cached { None } else { Some(leaf) })?;

        let t0 = self.be.now();
        self.tree.verify_chain(&mut self.be, NodeId::leaf(leaf), Account::Path, Account::Path)?;
        let chain = self.be.now() - t0;
        // the data read overlaps the counter fetch and OTP generation
        let ready = (chain + self.config.otp_cycles).max(self.config.nvm_read_cycles);
        self.be.charge(Account::Path, ready - chain);
        self.be.charge_hashes(Account::Path, 1, self.config.hash_cycles);

        let block = self.tree.counter_block(leaf).unwrap();
        let (major, minor) = (block.major, block.minors[addr.counter_slot()]);
        let plain = match self.be.lookup_data(addr.block_index()) {
            // never written; an overflow may have advanced its counter
            None => DataBlock::ZERO,
            Some((ct, mac)) => {
                if data_mac(&self.key, addr, &ct, major, minor) != mac {
                    return Err(Error::DataMacMismatch(addr));
                }
                xor_cipher(&ct, &gen_otp(&self.key, addr, major, minor))
            }
        };
        Ok((plain, self.end_op(OpKind::Read, start)))
    }

    /// Executes one trace op.
    pub fn step(&mut self, op: &TraceOp) -> Result<()> {
        match op.kind {
            OpKind::Write => self.write(op.addr, &op.payload).map(drop),
            OpKind::Read => self.read(op.addr).map(drop),
        }
    }

    /// Runs a whole trace, stopping at the first error.
    pub fn run(&mut self, trace: &Trace) -> Result<()> {
        trace.ops.iter().try_for_each(|op| self.step(op))
    }

    /// Applies every queued background job.
    pub fn finish(&mut self) -> Result<()> {
        self.tree.drain_pending(&mut self.be, None)
    }

    /// Orderly shutdown: drain background work, write back every dirty
    /// metadata line (leaves first), and retire the whole write queue.
    pub fn shutdown(&mut self) -> Result<()> {
        self.finish()?;
        let mut dirty: Vec<NodeId> = self.tree.dirty_nodes().map(|n| n.node).collect();
        dirty.sort_by_key(|n| (n.level, n.index));
        for node in dirty {
            self.tree.evict_node(&mut self.be, node)?;
        }
        self.be.retire_until(u64::MAX);
        Ok(())
    }

    /// State after a power failure now: queued entries drain in FIFO order,
    /// their tags overwrite the root; caches and pending jobs are lost.
    pub fn drain_on_crash(&self) -> (NvmImage, RootRegister) {
        self.be.crash_image()
    }

    /// Authoritative counter block for `leaf`: cached copy, else stored.
    pub fn current_counter_block(&self, leaf: u64) -> Result<CounterBlock> {
        if let Some(block) = self.tree.counter_block(leaf) {
            return Ok(block.clone());
        }
        match self.be.lookup_counter(leaf) {
            Some((bytes, _)) => CounterBlock::decode(&bytes, self.config.minor_bits),
            None => Ok(CounterBlock::new(self.config.minor_bits)),
        }
    }

    /// Scheme this controller runs.
    pub fn scheme(&self) -> UpdateScheme {
        self.config.scheme
    }
}
