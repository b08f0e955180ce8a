//! Persistent security metadata: counter blocks, tree nodes, the root
//! register, and the address layout that ties them together.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::MacTag;
use crate::error::{Error, Result};

pub const BLOCK_BYTES: usize = 64;
/// Data blocks covered by one counter block.
pub const BLOCKS_PER_COUNTER: usize = 64;
/// Bytes of data covered by one counter block.
pub const COUNTER_COVERAGE: u64 = (BLOCK_BYTES * BLOCKS_PER_COUNTER) as u64;
pub const FANOUT: usize = 8;
pub const SIT_COUNTER_BITS: u32 = 56;
pub const SIT_COUNTER_MASK: u64 = (1 << SIT_COUNTER_BITS) - 1;

/// Physical byte address.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address(u64);

impl Address {
    pub const fn new(value: u64) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn is_aligned(self) -> bool {
        self.0 % BLOCK_BYTES as u64 == 0
    }

    /// Index of the 64-byte block.
    pub const fn block_index(self) -> u64 {
        self.0 / BLOCK_BYTES as u64
    }

    /// Slot of this block inside its counter block.
    pub const fn counter_slot(self) -> usize {
        (self.block_index() % BLOCKS_PER_COUNTER as u64) as usize
    }

    pub const fn from_block_index(index: u64) -> Self {
        Self(index * BLOCK_BYTES as u64)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// A 64-byte line of user data, plaintext or ciphertext.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataBlock(pub [u8; BLOCK_BYTES]);

impl DataBlock {
    pub const ZERO: Self = Self([0; BLOCK_BYTES]);
}

impl Default for DataBlock {
    fn default() -> Self {
        Self::ZERO
    }
}

impl fmt::Debug for DataBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataBlock(")?;
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// Sum of a node's counters. For a counter block this is major plus all
/// minors; for a tree node it is the dummy counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafSum(pub u64);

/// Split-counter block: one major counter and 64 minor counters.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CounterBlock {
    pub major: u64,
    pub minors: [u32; BLOCKS_PER_COUNTER],
    minor_bits: u32,
}

impl CounterBlock {
    pub fn new(minor_bits: u32) -> Self {
        assert!((1..=31).contains(&minor_bits), "minor_bits must be in 1..=31");
        Self { major: 0, minors: [0; BLOCKS_PER_COUNTER], minor_bits }
    }

    pub fn minor_bits(&self) -> u32 {
        self.minor_bits
    }

    pub fn minor_limit(&self) -> u32 {
        1 << self.minor_bits
    }

    /// Bumps minor `idx`. On overflow the major counter advances and every
    /// minor resets to zero; returns `true` in that case.
    pub fn increment_minor(&mut self, idx: usize) -> bool {
        assert!(idx < BLOCKS_PER_COUNTER, "minor index out of range");
        if self.minors[idx] + 1 < self.minor_limit() {
            self.minors[idx] += 1;
            false
        } else {
            self.major += 1;
            self.minors = [0; BLOCKS_PER_COUNTER];
            true
        }
    }

    pub fn leaf_sum(&self) -> LeafSum {
        LeafSum(self.minors.iter().fold(self.major, |acc, &m| acc.wrapping_add(u64::from(m))))
    }

    /// Encoded size: 8 bytes of major plus the packed minors. Exactly 64
    /// bytes for 7-bit minors.
    pub fn encoded_len(minor_bits: u32) -> usize {
        8 + (BLOCKS_PER_COUNTER * minor_bits as usize).div_ceil(8)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; Self::encoded_len(self.minor_bits)];
        out[..8].copy_from_slice(&self.major.to_le_bytes());
        let mut packer = BitWriter::new(&mut out[8..]);
        for &m in &self.minors {
            packer.put(u64::from(m), self.minor_bits);
        }
        out
    }

    pub fn decode(bytes: &[u8], minor_bits: u32) -> Result<Self> {
        if bytes.len() != Self::encoded_len(minor_bits) {
            return Err(Error::Decode(format!(
                "counter block must be {} bytes, got {}",
                Self::encoded_len(minor_bits),
                bytes.len()
            )));
        }
        let mut block = Self::new(minor_bits);
        block.major = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let mut reader = BitReader::new(&bytes[8..]);
        for m in block.minors.iter_mut() {
            *m = reader.get(minor_bits) as u32;
        }
        Ok(block)
    }
}

/// Intermediate SIT node: eight 56-bit counters and one MAC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct SitNode {
    pub counters: [u64; FANOUT],
    pub hmac: MacTag,
}

impl SitNode {
    /// The dummy counter: sum of the node's own counters.
    pub fn dummy_counter(&self) -> LeafSum {
        LeafSum(self.counters.iter().fold(0u64, |acc, &c| acc.wrapping_add(c)))
    }

    /// The 56 bytes of packed counters, without the MAC.
    pub fn counter_bytes(&self) -> [u8; 56] {
        let mut out = [0u8; 56];
        let mut packer = BitWriter::new(&mut out);
        for &c in &self.counters {
            debug_assert!(c <= SIT_COUNTER_MASK, "SIT counter exceeds 56 bits");
            packer.put(c & SIT_COUNTER_MASK, SIT_COUNTER_BITS);
        }
        out
    }

    pub fn encode(&self) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        out[..56].copy_from_slice(&self.counter_bytes());
        out[56..].copy_from_slice(&self.hmac.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != BLOCK_BYTES {
            return Err(Error::Decode(format!("SIT node must be 64 bytes, got {}", bytes.len())));
        }
        let mut node = Self::default();
        let mut reader = BitReader::new(&bytes[..56]);
        for c in node.counters.iter_mut() {
            *c = reader.get(SIT_COUNTER_BITS);
        }
        node.hmac = MacTag::from_le_bytes(bytes[56..].try_into().unwrap());
        Ok(node)
    }
}

/// Bonsai Merkle tree node: eight child digests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BmtNode {
    pub hmacs: [MacTag; FANOUT],
}

impl BmtNode {
    pub fn encode(&self) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        for (chunk, tag) in out.chunks_mut(8).zip(&self.hmacs) {
            chunk.copy_from_slice(&tag.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != BLOCK_BYTES {
            return Err(Error::Decode(format!("BMT node must be 64 bytes, got {}", bytes.len())));
        }
        let mut node = Self::default();
        for (tag, chunk) in node.hmacs.iter_mut().zip(bytes.chunks(8)) {
            *tag = MacTag::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(node)
    }
}

/// The on-chip, non-volatile root: eight 64-bit values, one per memory
/// octant. SIT schemes keep counters here, the BMT baseline keeps digests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RootRegister {
    pub counters: [u64; FANOUT],
}

/// Identifies a metadata node: level 0 is a counter block, levels
/// `1..=top` are intermediate tree nodes. The root is not a `NodeId`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub level: u8,
    pub index: u64,
}

impl NodeId {
    pub const fn leaf(index: u64) -> Self {
        Self { level: 0, index }
    }

    pub const fn new(level: u8, index: u64) -> Self {
        Self { level, index }
    }

    pub const fn is_leaf(self) -> bool {
        self.level == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}[{}]", self.level, self.index)
    }
}

/// Shape of the integrity tree for a given memory size.
///
/// Each root counter covers one contiguous eighth of the counter blocks.
/// Below the root, every octant is an 8-ary tree with `top_level`
/// intermediate levels; the topmost node of an octant may be partially
/// populated when the octant size is not a power of eight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeGeometry {
    pub mem_size: u64,
    /// Levels including the leaf level and the root.
    pub levels: u32,
    pub fanout: u32,
    pub leaf_count: u64,
}

impl TreeGeometry {
    pub fn new(mem_size: u64) -> Result<Self> {
        if mem_size == 0 || mem_size % (COUNTER_COVERAGE * FANOUT as u64) != 0 {
            return Err(Error::Config(format!(
                "mem_size must be a nonzero multiple of {} bytes",
                COUNTER_COVERAGE * FANOUT as u64
            )));
        }
        let leaf_count = mem_size / COUNTER_COVERAGE;
        let span = leaf_count / FANOUT as u64;
        let mut intermediate = 1u32;
        while pow8(intermediate) < span {
            intermediate += 1;
        }
        Ok(Self { mem_size, levels: intermediate + 2, fanout: FANOUT as u32, leaf_count })
    }

    /// Highest intermediate level; its nodes are the root's children.
    pub fn top_level(&self) -> u8 {
        (self.levels - 2) as u8
    }

    /// Counter blocks per root counter.
    pub fn octant_span(&self) -> u64 {
        self.leaf_count / FANOUT as u64
    }

    pub fn nodes_per_octant(&self, level: u8) -> u64 {
        self.octant_span().div_ceil(pow8(u32::from(level)))
    }

    pub fn nodes_at_level(&self, level: u8) -> u64 {
        if level == 0 {
            self.leaf_count
        } else {
            self.nodes_per_octant(level) * FANOUT as u64
        }
    }

    pub fn octant_of_leaf(&self, leaf: u64) -> usize {
        (leaf / self.octant_span()) as usize
    }

    pub fn octant_of(&self, node: NodeId) -> usize {
        if node.is_leaf() {
            self.octant_of_leaf(node.index)
        } else {
            (node.index / self.nodes_per_octant(node.level)) as usize
        }
    }

    pub fn leaf_of(&self, addr: Address) -> u64 {
        addr.value() / COUNTER_COVERAGE
    }

    /// Parent of a node, or `None` when the parent is the root.
    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        if node.level >= self.top_level() {
            return None;
        }
        let oct = self.octant_of(node) as u64;
        let local = node.index - oct * self.nodes_per_octant(node.level);
        let level = node.level + 1;
        Some(NodeId::new(level, oct * self.nodes_per_octant(level) + local / FANOUT as u64))
    }

    /// Slot of `node` inside its parent (or inside the root).
    pub fn slot_in_parent(&self, node: NodeId) -> usize {
        if node.level == self.top_level() {
            return self.octant_of(node);
        }
        let oct = self.octant_of(node) as u64;
        let local = node.index - oct * self.nodes_per_octant(node.level);
        (local % FANOUT as u64) as usize
    }

    /// Child of `node` at `slot`, if that child exists.
    pub fn child(&self, node: NodeId, slot: usize) -> Option<NodeId> {
        debug_assert!(node.level >= 1);
        let oct = self.octant_of(node) as u64;
        let local = node.index - oct * self.nodes_per_octant(node.level);
        let child_level = node.level - 1;
        let child_local = local * FANOUT as u64 + slot as u64;
        let per_octant = if child_level == 0 { self.octant_span() } else { self.nodes_per_octant(child_level) };
        (child_local < per_octant).then(|| NodeId::new(child_level, oct * per_octant + child_local))
    }

    /// Intermediate ancestors of a leaf, bottom-up (level 1 first).
    pub fn branch(&self, leaf: u64) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.top_level() as usize);
        let mut cur = NodeId::leaf(leaf);
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        debug_assert_eq!(cur.level, self.top_level());
        out
    }

    /// Metadata address of a node, used as MAC input and for cache set
    /// selection. Counter blocks start right after user memory, followed by
    /// each tree level in turn.
    pub fn node_address(&self, node: NodeId) -> Address {
        let mut base = self.mem_size;
        for level in 0..node.level {
            base += self.nodes_at_level(level) * BLOCK_BYTES as u64;
        }
        Address::new(base + node.index * BLOCK_BYTES as u64)
    }

    pub fn check_address(&self, addr: Address) -> Result<()> {
        if !addr.is_aligned() {
            return Err(Error::Unaligned(addr));
        }
        if addr.value() >= self.mem_size {
            return Err(Error::OutOfRange(addr));
        }
        Ok(())
    }
}

/// Result of [`layout`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub leaf_index: u64,
    /// Intermediate ancestor addresses, leaf to root.
    pub branch: Vec<Address>,
    pub octant: usize,
}

pub fn layout(addr: Address, geometry: &TreeGeometry) -> Result<Layout> {
    if addr.value() >= geometry.mem_size {
        return Err(Error::OutOfRange(addr));
    }
    let leaf_index = geometry.leaf_of(addr);
    Ok(Layout {
        leaf_index,
        branch: geometry.branch(leaf_index).into_iter().map(|n| geometry.node_address(n)).collect(),
        octant: geometry.octant_of_leaf(leaf_index),
    })
}

fn pow8(exp: u32) -> u64 {
    1u64 << (3 * exp)
}

struct BitWriter<'a> {
    buf: &'a mut [u8],
    pos: usize,
}

impl<'a> BitWriter<'a> {
    fn new(buf: &'a mut [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn put(&mut self, value: u64, bits: u32) {
        for i in 0..bits {
            if value >> i & 1 == 1 {
                self.buf[self.pos / 8] |= 1 << (self.pos % 8);
            }
            self.pos += 1;
        }
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn get(&mut self, bits: u32) -> u64 {
        let mut value = 0u64;
        for i in 0..bits {
            if self.buf[self.pos / 8] >> (self.pos % 8) & 1 == 1 {
                value |= 1 << i;
            }
            self.pos += 1;
        }
        value
    }
}
