//! The SGX-style integrity tree and its update schemes.
//!
//! Counter blocks are the leaves. Each intermediate node holds one counter per
//! child and a MAC keyed on its parent's counter for it; the eight root
//! counters live on chip. A Bonsai Merkle tree over the same leaves is kept
//! as the hash-tree baseline.
//!
//! The counting schemes (eager, lazy computing, shortcut) all maintain the
//! same invariant once background work drains: every parent counter equals
//! the sum of its child's counters, and each root counter equals the sum of
//! the leaf sums in its octant. Reconstruction after a crash relies on it.

mod reconstruct;

use std::collections::{HashMap, VecDeque};

pub use reconstruct::{bmt_fold, reconstruct, reconstruct_with, RebuiltTree, ReconstructionReport, Verdict};

use crate::cache::{Evicted, SetAssocCache};
use crate::config::{Config, UpdateScheme};
use crate::controller::backend::Backend;
use crate::controller::queue::WriteQueueEntry;
use crate::crypto::{mac, MacTag, SecretKey};
use crate::error::{Error, Result};
use crate::ledger::Account;
use crate::metadata::{
    Address, BmtNode, CounterBlock, LeafSum, NodeId, RootRegister, SitNode, TreeGeometry, BLOCK_BYTES, FANOUT,
};
use crate::nvm::Persist;

pub use crate::metadata::TreeGeometry as Geometry;

/// MAC of an intermediate SIT node.
pub fn compute_node_hmac(key: &SecretKey, node_addr: Address, counters: &[u64; FANOUT], parent_counter: u64) -> MacTag {
    let node = SitNode { counters: *counters, hmac: MacTag(0) };
    mac(key, &[&node_addr.value().to_le_bytes(), &node.counter_bytes(), &parent_counter.to_le_bytes()])
}

/// MAC of a counter block, keyed on its parent counter.
pub fn compute_leaf_hmac(key: &SecretKey, leaf_addr: Address, block: &CounterBlock, parent_counter: u64) -> MacTag {
    mac(key, &[&leaf_addr.value().to_le_bytes(), &block.encode(), &parent_counter.to_le_bytes()])
}

/// Digest of a counter block in the Bonsai Merkle tree.
pub fn bmt_leaf_digest(key: &SecretKey, block: &CounterBlock) -> MacTag {
    mac(key, &[b"bmt-leaf", &block.encode()])
}

/// Digest of an intermediate Bonsai Merkle tree node.
pub fn bmt_node_digest(key: &SecretKey, node: &BmtNode) -> MacTag {
    mac(key, &[b"bmt-node", &node.encode()])
}

/// Digests of never-written BMT nodes, indexed by level (0 = counter block).
pub fn bmt_pristine_digests(key: &SecretKey, geometry: &TreeGeometry, minor_bits: u32) -> Vec<MacTag> {
    let mut out = vec![bmt_leaf_digest(key, &CounterBlock::new(minor_bits))];
    for _ in 1..=geometry.top_level() {
        let below = *out.last().unwrap();
        out.push(bmt_node_digest(key, &BmtNode { hmacs: [below; FANOUT] }));
    }
    out
}

/// Initial root register contents for a scheme.
pub fn initial_root(scheme: UpdateScheme, key: &SecretKey, geometry: &TreeGeometry, minor_bits: u32) -> RootRegister {
    if scheme.is_bmt() {
        let top = *bmt_pristine_digests(key, geometry, minor_bits).last().unwrap();
        RootRegister { counters: [top.0; FANOUT] }
    } else {
        RootRegister::default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeValue {
    Counter(CounterBlock),
    Sit(SitNode),
    Bmt(BmtNode),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CachedNode {
    pub node: NodeId,
    pub value: NodeValue,
    /// Leaf MAC of a counter block (SIT schemes); unused otherwise.
    pub leaf_mac: MacTag,
    /// Whether the stored MAC already reflects the current contents.
    pub hmac_fresh: bool,
}

impl CachedNode {
    pub fn counter_block(&self) -> &CounterBlock {
        match &self.value {
            NodeValue::Counter(c) => c,
            _ => panic!("{} is not a counter block", self.node),
        }
    }

    fn counter_block_mut(&mut self) -> &mut CounterBlock {
        match &mut self.value {
            NodeValue::Counter(c) => c,
            _ => panic!("{} is not a counter block", self.node),
        }
    }

    pub fn sit(&self) -> &SitNode {
        match &self.value {
            NodeValue::Sit(n) => n,
            _ => panic!("{} is not a SIT node", self.node),
        }
    }

    fn sit_mut(&mut self) -> &mut SitNode {
        match &mut self.value {
            NodeValue::Sit(n) => n,
            _ => panic!("{} is not a SIT node", self.node),
        }
    }

    pub fn bmt(&self) -> &BmtNode {
        match &self.value {
            NodeValue::Bmt(n) => n,
            _ => panic!("{} is not a BMT node", self.node),
        }
    }

    fn bmt_mut(&mut self) -> &mut BmtNode {
        match &mut self.value {
            NodeValue::Bmt(n) => n,
            _ => panic!("{} is not a BMT node", self.node),
        }
    }

    /// Counter sum of the node: leaf sum or dummy counter.
    pub fn sum(&self) -> LeafSum {
        match &self.value {
            NodeValue::Counter(c) => c.leaf_sum(),
            NodeValue::Sit(n) => n.dummy_counter(),
            NodeValue::Bmt(_) => LeafSum(0),
        }
    }
}

/// Deferred branch update for the shortcut scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchUpdateJob {
    pub leaf_index: u64,
    pub enqueue_cycle: u64,
}

#[derive(Clone, Debug)]
pub struct IntegrityTree {
    geometry: TreeGeometry,
    scheme: UpdateScheme,
    key: SecretKey,
    hash_cycles: u64,
    nvm_read_cycles: u64,
    eager_parallel_hashes: u64,
    minor_bits: u32,
    cache: SetAssocCache<CachedNode>,
    root: RootRegister,
    pending: VecDeque<BranchUpdateJob>,
    pending_per_octant: [u64; FANOUT],
    pinned: Vec<u64>,
    bmt_pristine: Vec<MacTag>,
    /// Last counter block handed to the write queue, per leaf.
    persisted: HashMap<u64, CounterBlock>,
}

impl IntegrityTree {
    pub fn new(config: &Config, geometry: TreeGeometry, key: SecretKey) -> Self {
        let lines = (config.cache_kib * 1024 / BLOCK_BYTES as u64) as usize;
        Self {
            geometry,
            scheme: config.scheme,
            key,
            hash_cycles: config.hash_cycles,
            nvm_read_cycles: config.nvm_read_cycles,
            eager_parallel_hashes: u64::from(config.eager_parallel_hashes),
            minor_bits: config.minor_bits,
            cache: SetAssocCache::new(lines, config.cache_ways),
            root: initial_root(config.scheme, &key, &geometry, config.minor_bits),
            pending: VecDeque::new(),
            pending_per_octant: [0; FANOUT],
            pinned: Vec::new(),
            bmt_pristine: bmt_pristine_digests(&key, &geometry, config.minor_bits),
            persisted: HashMap::new(),
        }
    }

    pub fn geometry(&self) -> &TreeGeometry {
        &self.geometry
    }

    pub fn scheme(&self) -> UpdateScheme {
        self.scheme
    }

    pub fn key(&self) -> &SecretKey {
        &self.key
    }

    /// The live (volatile working copy of the) root.
    pub fn root(&self) -> &RootRegister {
        &self.root
    }

    pub fn cache(&self) -> &SetAssocCache<CachedNode> {
        &self.cache
    }

    pub fn pending_jobs(&self) -> impl Iterator<Item = &BranchUpdateJob> {
        self.pending.iter()
    }

    pub fn line(&self, node: NodeId) -> u64 {
        self.geometry.node_address(node).value() / BLOCK_BYTES as u64
    }

    pub fn cached(&self, node: NodeId) -> Option<&CachedNode> {
        self.cache.peek(self.line(node))
    }

    fn cached_mut(&mut self, node: NodeId) -> &mut CachedNode {
        let line = self.line(node);
        self.cache.get_mut(line).unwrap_or_else(|| panic!("{node} must be cached"))
    }

    /// Counter block as last handed to NVM (pristine if never).
    pub fn persisted_block(&self, leaf: u64) -> CounterBlock {
        self.persisted.get(&leaf).cloned().unwrap_or_else(|| CounterBlock::new(self.minor_bits))
    }

    fn pin(&mut self, node: NodeId) {
        let line = self.line(node);
        self.pinned.push(line);
    }

    fn unpin(&mut self, count: usize) {
        let keep = self.pinned.len() - count;
        self.pinned.truncate(keep);
    }

    fn hash(&self, be: &mut Backend, account: Account, count: u64) {
        be.charge_hashes(account, count, count * self.hash_cycles);
    }

    /// Hashes that eager SIT may spread over several hash circuits.
    fn eager_hashes(&self, be: &mut Backend, count: u64) {
        let rounds = count.div_ceil(self.eager_parallel_hashes);
        be.charge_hashes(Account::Path, count, rounds * self.hash_cycles);
    }

    fn charge_read(&self, be: &mut Backend, account: Account, node: NodeId) {
        match (account, node.is_leaf()) {
            (Account::Path, true) => be.ledger.counter_reads += 1,
            (Account::Path, false) => be.ledger.tree_node_reads += 1,
            (Account::Background, true) => be.ledger.background_counter_reads += 1,
            (Account::Background, false) => be.ledger.background_node_reads += 1,
        }
        be.charge(account, self.nvm_read_cycles);
    }

    /// Value the parent currently holds for `node`, or `None` if the parent
    /// is not cached. For the top level this is the root entry minus any
    /// shortcut increments not yet pushed down.
    fn parent_value(&self, node: NodeId) -> Option<u64> {
        let oct = self.geometry.octant_of(node);
        match self.geometry.parent(node) {
            None => Some(self.root.counters[oct] - self.pending_per_octant[oct]),
            Some(p) => {
                let slot = self.geometry.slot_in_parent(node);
                self.cached(p).map(|c| match &c.value {
                    NodeValue::Sit(s) => s.counters[slot],
                    NodeValue::Bmt(b) => b.hmacs[slot].0,
                    NodeValue::Counter(_) => unreachable!("counter blocks have no children"),
                })
            }
        }
    }

    fn pristine_node(&self, node: NodeId) -> NodeValue {
        if node.is_leaf() {
            NodeValue::Counter(CounterBlock::new(self.minor_bits))
        } else if self.scheme.is_bmt() {
            NodeValue::Bmt(BmtNode { hmacs: [self.bmt_pristine[node.level as usize - 1]; FANOUT] })
        } else {
            let addr = self.geometry.node_address(node);
            let counters = [0; FANOUT];
            NodeValue::Sit(SitNode { counters, hmac: compute_node_hmac(&self.key, addr, &counters, 0) })
        }
    }

    /// Reads a node from NVM (through the write queue) without verifying it.
    fn load(&self, be: &Backend, node: NodeId) -> Result<(NodeValue, MacTag)> {
        let addr = self.geometry.node_address(node);
        if node.is_leaf() {
            return Ok(match be.lookup_counter(node.index) {
                Some((bytes, stored)) => (NodeValue::Counter(CounterBlock::decode(&bytes, self.minor_bits)?), stored),
                None => {
                    let block = CounterBlock::new(self.minor_bits);
                    let stored = if self.scheme.is_bmt() {
                        bmt_leaf_digest(&self.key, &block)
                    } else {
                        compute_leaf_hmac(&self.key, addr, &block, 0)
                    };
                    (NodeValue::Counter(block), stored)
                }
            });
        }
        Ok(match be.lookup_node(node) {
            Some(bytes) if self.scheme.is_bmt() => (NodeValue::Bmt(BmtNode::decode(&bytes)?), MacTag(0)),
            Some(bytes) => {
                let sit = SitNode::decode(&bytes)?;
                (NodeValue::Sit(sit), sit.hmac)
            }
            None => {
                let value = self.pristine_node(node);
                let stored = match &value {
                    NodeValue::Sit(s) => s.hmac,
                    _ => MacTag(0),
                };
                (value, stored)
            }
        })
    }

    /// Checks a freshly loaded node against what its parent expects.
    fn verify(&self, node: NodeId, value: &NodeValue, stored: MacTag, expected: u64) -> bool {
        let addr = self.geometry.node_address(node);
        match value {
            NodeValue::Counter(c) if self.scheme.is_bmt() => bmt_leaf_digest(&self.key, c).0 == expected,
            NodeValue::Counter(c) => compute_leaf_hmac(&self.key, addr, c, expected) == stored,
            NodeValue::Sit(s) => compute_node_hmac(&self.key, addr, &s.counters, expected) == stored,
            NodeValue::Bmt(b) => bmt_node_digest(&self.key, b).0 == expected,
        }
    }

    /// Brings `node` into the cache, fetching and verifying every uncached
    /// ancestor top-down from the nearest cached one (or the root).
    ///
    /// `account` pays for ancestor reads and all verification hashes. The
    /// read of `node` itself goes to `own_read`.
    pub fn verify_chain(&mut self, be: &mut Backend, node: NodeId, account: Account, own_read: Account) -> Result<()> {
        if self.cache.access(self.line(node)) {
            return Ok(());
        }
        let mut chain = vec![node];
        let mut cur = node;
        while let Some(p) = self.geometry.parent(cur) {
            if self.cache.access(self.line(p)) {
                break;
            }
            chain.push(p);
            cur = p;
        }
        let mut pinned = 0;
        let result = (|| {
            for &n in chain.iter().rev() {
                // a nested lazy write-back may have loaded it already
                if self.cache.contains(self.line(n)) {
                    continue;
                }
                let (value, stored) = self.load(be, n)?;
                self.charge_read(be, if n == node { own_read } else { account }, n);
                self.hash(be, account, 1);
                let expected = self.parent_value(n).expect("parent is cached or the root");
                if !self.verify(n, &value, stored, expected) {
                    return Err(Error::IntegrityViolation { level: n.level, node: n });
                }
                let entry = CachedNode { node: n, value, leaf_mac: stored, hmac_fresh: true };
                self.insert(be, entry, account)?;
                self.pin(n);
                pinned += 1;
            }
            Ok(())
        })();
        self.unpin(pinned);
        result
    }

    fn insert(&mut self, be: &mut Backend, entry: CachedNode, account: Account) -> Result<()> {
        let line = self.line(entry.node);
        if matches!(self.scheme, UpdateScheme::Lazy | UpdateScheme::BmtLazy) {
            // Lazy write-backs update the victim's parent. Fetch that parent
            // while the victim is still resident so no nested load can see
            // a stale copy of the victim in NVM.
            while let Some(v) = self.cache.victim_for(line, &self.pinned) {
                let victim = self.cache.peek(v).unwrap().node;
                let Some(p) = self.geometry.parent(victim) else { break };
                let needs_parent = self.cache.is_dirty(v) && !(victim.is_leaf() && self.scheme.is_bmt());
                if !needs_parent || self.cache.contains(self.line(p)) {
                    break;
                }
                self.pinned.push(v);
                let r = self.verify_chain(be, p, Account::Path, Account::Path);
                self.pinned.pop();
                r?;
            }
            if self.cache.contains(line) {
                return Ok(());
            }
        }
        if let Some(ev) = self.cache.insert(line, entry, false, &self.pinned) {
            self.write_back(be, ev, account)?;
        }
        Ok(())
    }

    /// Explicitly evicts a node, writing it back if dirty.
    pub fn evict_node(&mut self, be: &mut Backend, node: NodeId) -> Result<()> {
        if let Some(ev) = self.cache.remove(self.line(node)) {
            self.write_back(be, ev, Account::Background)?;
        }
        Ok(())
    }

    /// Parent value to seal an evicted node with: the cached parent's
    /// counter when it is current, otherwise the node's own sum.
    fn sealing_counter(&self, be: &mut Backend, node: &CachedNode) -> u64 {
        let dummy = node.sum().0;
        let oct = self.geometry.octant_of(node.node);
        let parent = if self.pending_per_octant[oct] == 0 { self.parent_value(node.node) } else { None };
        match parent {
            Some(p) => {
                if p != dummy {
                    be.ledger.dummy_mismatches += 1;
                }
                p
            }
            None => {
                be.ledger.dummy_counter_evictions += 1;
                dummy
            }
        }
    }

    fn write_back(&mut self, be: &mut Backend, ev: Evicted<CachedNode>, account: Account) -> Result<()> {
        if !ev.dirty {
            return Ok(());
        }
        be.ledger.dirty_evictions += 1;
        let mut node = ev.value;
        match self.scheme {
            UpdateScheme::Lazy => self.lazy_seal(be, &mut node)?,
            UpdateScheme::BmtLazy => self.bmt_lazy_seal(be, &node)?,
            UpdateScheme::BmtEager => {}
            _ if !node.hmac_fresh => {
                let parent = self.sealing_counter(be, &node);
                self.seal(&mut node, parent);
                self.hash(be, Account::Background, 1);
            }
            _ => {}
        }
        self.persist(be, &node, account);
        Ok(())
    }

    fn seal(&self, node: &mut CachedNode, parent: u64) {
        let addr = self.geometry.node_address(node.node);
        match &mut node.value {
            NodeValue::Counter(c) => node.leaf_mac = compute_leaf_hmac(&self.key, addr, c, parent),
            NodeValue::Sit(s) => s.hmac = compute_node_hmac(&self.key, addr, &s.counters, parent),
            NodeValue::Bmt(_) => {}
        }
        node.hmac_fresh = true;
    }

    /// Lazy SIT write-back: the parent's counter advances for every persist
    /// of a non-leaf node (leaf persists were counted on the write path).
    fn lazy_seal(&mut self, be: &mut Backend, node: &mut CachedNode) -> Result<()> {
        let parent = match self.geometry.parent(node.node) {
            None => self.root.counters[self.geometry.octant_of(node.node)],
            Some(p) => {
                self.verify_chain(be, p, Account::Path, Account::Path)?;
                let slot = self.geometry.slot_in_parent(node.node);
                let parent = self.cached_mut(p).sit_mut();
                if !node.node.is_leaf() {
                    parent.counters[slot] += 1;
                }
                parent.counters[slot]
            }
        };
        if !node.hmac_fresh || !node.node.is_leaf() {
            self.seal(node, parent);
            self.hash(be, Account::Path, 1);
        }
        Ok(())
    }

    /// Lazy BMT write-back: fold the node's digest into its parent.
    fn bmt_lazy_seal(&mut self, be: &mut Backend, node: &CachedNode) -> Result<()> {
        if node.node.is_leaf() {
            return Ok(());
        }
        let digest = bmt_node_digest(&self.key, node.bmt());
        self.hash(be, Account::Path, 1);
        match self.geometry.parent(node.node) {
            None => self.root.counters[self.geometry.octant_of(node.node)] = digest.0,
            Some(p) => {
                self.verify_chain(be, p, Account::Path, Account::Path)?;
                let slot = self.geometry.slot_in_parent(node.node);
                self.cached_mut(p).bmt_mut().hmacs[slot] = digest;
            }
        }
        Ok(())
    }

    fn persist(&mut self, be: &mut Backend, node: &CachedNode, account: Account) {
        let addr = self.geometry.node_address(node.node);
        let persist = match &node.value {
            NodeValue::Counter(c) => {
                self.persisted.insert(node.node.index, c.clone());
                let mac = if self.scheme.is_bmt() { bmt_leaf_digest(&self.key, c) } else { node.leaf_mac };
                Persist::Counter { leaf: node.node.index, bytes: c.encode(), mac }
            }
            NodeValue::Sit(s) => Persist::Node { node: node.node, bytes: s.encode() },
            NodeValue::Bmt(b) => Persist::Node { node: node.node, bytes: b.encode() },
        };
        be.enqueue(WriteQueueEntry::metadata(addr, persist), account);
    }

    /// Persists a cached counter block ahead of eviction so that its NVM copy
    /// stays within the counter-recovery window.
    pub fn persist_leaf_now(&mut self, be: &mut Backend, leaf: u64, account: Account) -> Result<()> {
        let node = NodeId::leaf(leaf);
        let line = self.line(node);
        let mut entry = self.cached(node).cloned().expect("counter block must be cached");
        if !self.scheme.is_bmt() && !entry.hmac_fresh {
            let parent = self.sealing_counter(be, &entry);
            self.seal(&mut entry, parent);
            self.hash(be, Account::Background, 1);
        }
        self.persist(be, &entry, account);
        *self.cache.get_mut(line).unwrap() = entry;
        self.cache.mark_clean(line);
        Ok(())
    }

    /// Fetches a counter block for the write path. Under the shortcut scheme
    /// only the block's own read is on the critical path; its verification
    /// rides with the background branch update.
    pub fn load_counter_block(&mut self, be: &mut Backend, leaf: u64) -> Result<()> {
        let verify_account = if self.scheme == UpdateScheme::Scue { Account::Background } else { Account::Path };
        self.verify_chain(be, NodeId::leaf(leaf), verify_account, Account::Path)
    }

    pub fn counter_block(&self, leaf: u64) -> Option<&CounterBlock> {
        self.cached(NodeId::leaf(leaf)).map(CachedNode::counter_block)
    }

    pub(crate) fn counter_block_mut(&mut self, leaf: u64) -> &mut CounterBlock {
        let node = self.cached_mut(NodeId::leaf(leaf));
        node.hmac_fresh = false;
        node.counter_block_mut()
    }

    pub(crate) fn pin_leaf(&mut self, leaf: u64) {
        self.pin(NodeId::leaf(leaf));
    }

    pub(crate) fn unpin_all(&mut self) {
        self.pinned.clear();
    }

    /// Ensures every branch node of `leaf` is cached, top-down, and pins them.
    fn load_branch(&mut self, be: &mut Backend, leaf: u64, account: Account) -> Result<Vec<NodeId>> {
        let branch = self.geometry.branch(leaf);
        for &n in branch.iter().rev() {
            self.verify_chain(be, n, account, account)?;
            self.pin(n);
        }
        Ok(branch)
    }

    /// Adds `delta` to the counter for `leaf` at every branch level.
    fn bump_branch(&mut self, leaf: u64, branch: &[NodeId], delta: i64) {
        let mut child = NodeId::leaf(leaf);
        for &n in branch {
            let slot = self.geometry.slot_in_parent(child);
            let node = self.cached_mut(n);
            node.hmac_fresh = false;
            let c = &mut node.sit_mut().counters[slot];
            *c = c.checked_add_signed(delta).expect("SIT counter underflow");
            child = n;
        }
    }

    fn bump_root(&mut self, leaf: u64, delta: i64) {
        let oct = self.geometry.octant_of_leaf(leaf);
        let c = &mut self.root.counters[oct];
        *c = c.checked_add_signed(delta).expect("root counter underflow");
    }

    /// Eager SIT: increments every branch counter and the root, then
    /// recomputes each branch MAC on the critical path.
    pub fn eager_update(&mut self, be: &mut Backend, leaf: u64) -> Result<u64> {
        let start = be.now();
        let branch = self.load_branch(be, leaf, Account::Path)?;
        self.bump_branch(leaf, &branch, 1);
        self.bump_root(leaf, 1);
        // leaf MAC plus one MAC per branch node, each keyed on its new parent
        let mut sealed = NodeId::leaf(leaf);
        let mut to_seal = vec![sealed];
        to_seal.extend(&branch);
        for &n in &to_seal {
            let parent = self.parent_value(n).unwrap();
            let mut entry = self.cached(n).unwrap().clone();
            self.seal(&mut entry, parent);
            *self.cached_mut(n) = entry;
            sealed = n;
        }
        let _ = sealed;
        self.eager_hashes(be, to_seal.len() as u64);
        self.unpin(branch.len());
        Ok(be.now() - start)
    }

    /// Lazy SIT: only the parent counter advances; the leaf MAC is computed
    /// against it on the critical path.
    pub fn lazy_update(&mut self, be: &mut Backend, leaf: u64) -> Result<u64> {
        let start = be.now();
        let node = NodeId::leaf(leaf);
        let parent = self.geometry.parent(node).expect("leaves have a parent node");
        self.verify_chain(be, parent, Account::Path, Account::Path)?;
        let slot = self.geometry.slot_in_parent(node);
        let p = self.cached_mut(parent).sit_mut();
        p.counters[slot] += 1;
        let value = p.counters[slot];
        self.cached_mut(parent).hmac_fresh = false;
        let mut entry = self.cached(node).unwrap().clone();
        self.seal(&mut entry, value);
        *self.cached_mut(node) = entry;
        self.hash(be, Account::Path, 1);
        Ok(be.now() - start)
    }

    /// Lazy computing: every branch counter and the root advance on the
    /// critical path, but MACs wait for eviction.
    pub fn lc_update(&mut self, be: &mut Backend, leaf: u64) -> Result<u64> {
        let start = be.now();
        let branch = self.load_branch(be, leaf, Account::Path)?;
        self.bump_branch(leaf, &branch, 1);
        self.bump_root(leaf, 1);
        self.unpin(branch.len());
        Ok(be.now() - start)
    }

    /// Shortcut update: bump the root counter now and queue the branch for
    /// the background updater. No tree node is touched on the critical path.
    pub fn scue_update(&mut self, be: &mut Backend, leaf: u64) -> u64 {
        self.bump_root(leaf, 1);
        self.pending_per_octant[self.geometry.octant_of_leaf(leaf)] += 1;
        be.ledger.background_jobs += 1;
        self.pending.push_back(BranchUpdateJob { leaf_index: leaf, enqueue_cycle: be.now() });
        0
    }

    /// Applies one queued shortcut job to the intermediate nodes using lazy
    /// computing. Jobs must be drained in FIFO order.
    pub fn drain_background(&mut self, be: &mut Backend, job: BranchUpdateJob, account: Account) -> Result<()> {
        let leaf = job.leaf_index;
        let oct = self.geometry.octant_of_leaf(leaf);
        let branch = self.load_branch(be, leaf, account)?;
        self.bump_branch(leaf, &branch, 1);
        self.pending_per_octant[oct] -= 1;
        self.unpin(branch.len());
        Ok(())
    }

    /// Drains every queued job. Jobs whose branch overlaps `forcing_leaf`
    /// are charged to the critical path.
    pub fn drain_pending(&mut self, be: &mut Backend, forcing_leaf: Option<u64>) -> Result<()> {
        let forced_octant = forcing_leaf.map(|l| self.geometry.octant_of_leaf(l));
        while let Some(job) = self.pending.pop_front() {
            let forced = forced_octant == Some(self.geometry.octant_of_leaf(job.leaf_index));
            let account = if forced {
                be.ledger.forced_jobs += 1;
                Account::Path
            } else {
                Account::Background
            };
            self.drain_background(be, job, account)?;
        }
        Ok(())
    }

    /// Eager BMT: rehash the whole branch up to the root.
    fn bmt_eager_update(&mut self, be: &mut Backend, leaf: u64) -> Result<u64> {
        let start = be.now();
        let branch = self.load_branch(be, leaf, Account::Path)?;
        let mut child = NodeId::leaf(leaf);
        let mut digest = bmt_leaf_digest(&self.key, self.cached(child).unwrap().counter_block());
        for &n in &branch {
            let slot = self.geometry.slot_in_parent(child);
            let key = self.key;
            let node = self.cached_mut(n).bmt_mut();
            node.hmacs[slot] = digest;
            digest = bmt_node_digest(&key, node);
            child = n;
        }
        self.root.counters[self.geometry.octant_of_leaf(leaf)] = digest.0;
        self.hash(be, Account::Path, branch.len() as u64 + 1);
        self.unpin(branch.len());
        Ok(be.now() - start)
    }

    /// Lazy BMT: only the parent's digest slot is refreshed.
    fn bmt_lazy_update(&mut self, be: &mut Backend, leaf: u64) -> Result<u64> {
        let start = be.now();
        let node = NodeId::leaf(leaf);
        let parent = self.geometry.parent(node).expect("leaves have a parent node");
        self.verify_chain(be, parent, Account::Path, Account::Path)?;
        let digest = bmt_leaf_digest(&self.key, self.cached(node).unwrap().counter_block());
        let slot = self.geometry.slot_in_parent(node);
        self.cached_mut(parent).bmt_mut().hmacs[slot] = digest;
        self.hash(be, Account::Path, 1);
        Ok(be.now() - start)
    }

    /// BMT update under the eager or lazy policy.
    pub fn bmt_update(&mut self, be: &mut Backend, leaf: u64, eager: bool) -> Result<u64> {
        if eager {
            self.bmt_eager_update(be, leaf)
        } else {
            self.bmt_lazy_update(be, leaf)
        }
    }

    /// Runs the configured scheme's update for a leaf whose counter block
    /// was just incremented. Returns critical-path cycles.
    pub fn update(&mut self, be: &mut Backend, leaf: u64) -> Result<u64> {
        match self.scheme {
            UpdateScheme::Eager => self.eager_update(be, leaf),
            UpdateScheme::Lazy => self.lazy_update(be, leaf),
            UpdateScheme::LazyComputing => self.lc_update(be, leaf),
            UpdateScheme::Scue => Ok(self.scue_update(be, leaf)),
            UpdateScheme::BmtEager => self.bmt_update(be, leaf, true),
            UpdateScheme::BmtLazy => self.bmt_update(be, leaf, false),
        }
    }

    /// Keeps parent counters equal to child sums across a minor overflow by
    /// applying `new_sum - old_sum` to every ancestor and the root. Stands in
    /// for the triggering write's own increment.
    pub fn overflow_resync(&mut self, be: &mut Backend, leaf: u64, old_sum: LeafSum, new_sum: LeafSum) -> Result<()> {
        be.ledger.overflows += 1;
        let delta = new_sum.0 as i64 - old_sum.0 as i64;
        self.drain_pending(be, None)?;
        let branch = self.load_branch(be, leaf, Account::Background)?;
        self.bump_branch(leaf, &branch, delta);
        self.bump_root(leaf, delta);
        self.unpin(branch.len());
        Ok(())
    }

    /// Dirty cache contents, for tests and sweeps.
    pub fn dirty_nodes(&self) -> impl Iterator<Item = &CachedNode> {
        self.cache.iter().filter(|(_, _, dirty)| *dirty).map(|(_, v, _)| v)
    }
}
