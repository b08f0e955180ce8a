//! Synthetic traces and the trace file format.
//!
//! The generators imitate the address patterns of persistent data-structure
//! benchmarks (locality, write intensity). They are approximations.
//!
//! File format, one op per line:
//!
//! ```text
//! # comment
//! W 0x1000
//! W 0x1040 <128 hex chars of payload>
//! R 0x1000
//! ```

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::crypto::{gen_otp, SecretKey};
use crate::error::{Error, Result};
use crate::ledger::OpKind;
use crate::metadata::{Address, DataBlock, BLOCK_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Array,
    Btree,
    Hash,
    Queue,
    Rbtree,
    Seqwrite,
    Randwrite,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 7] = [
        WorkloadKind::Array,
        WorkloadKind::Btree,
        WorkloadKind::Hash,
        WorkloadKind::Queue,
        WorkloadKind::Rbtree,
        WorkloadKind::Seqwrite,
        WorkloadKind::Randwrite,
    ];

    /// The five data-structure workloads.
    pub const STRUCTURES: [WorkloadKind; 5] =
        [WorkloadKind::Array, WorkloadKind::Btree, WorkloadKind::Hash, WorkloadKind::Queue, WorkloadKind::Rbtree];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Array => "array",
            WorkloadKind::Btree => "btree",
            WorkloadKind::Hash => "hash",
            WorkloadKind::Queue => "queue",
            WorkloadKind::Rbtree => "rbtree",
            WorkloadKind::Seqwrite => "seqwrite",
            WorkloadKind::Randwrite => "randwrite",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown workload kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceOp {
    pub kind: OpKind,
    pub addr: Address,
    /// Plaintext for writes; ignored for reads.
    pub payload: DataBlock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub ops: Vec<TraceOp>,
    pub seed: u64,
    pub label: String,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn writes(&self) -> usize {
        self.ops.iter().filter(|o| o.kind == OpKind::Write).count()
    }

    /// Serializes in the trace file format, payloads included.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {} seed={}\n", self.label, self.seed);
        for op in &self.ops {
            match op.kind {
                OpKind::Read => writeln!(out, "R {:#x}", op.addr.value()),
                OpKind::Write => writeln!(out, "W {:#x} {}", op.addr.value(), hex(&op.payload.0)),
            }
            .unwrap();
        }
        out
    }
}

/// Default write payload: a keyed hash of address, op index and seed.
pub fn default_payload(addr: Address, index: u64, seed: u64) -> DataBlock {
    let key = SecretKey::from_seed(seed ^ 0x7061_796c_6f61_6400);
    DataBlock(gen_otp(&key, addr, index, 0).0)
}

struct Builder {
    ops: Vec<TraceOp>,
    seed: u64,
    blocks: u64,
}

impl Builder {
    fn push(&mut self, kind: OpKind, block: u64) {
        let addr = Address::from_block_index(block % self.blocks);
        let payload = match kind {
            OpKind::Write => default_payload(addr, self.ops.len() as u64, self.seed),
            OpKind::Read => DataBlock::ZERO,
        };
        self.ops.push(TraceOp { kind, addr, payload });
    }
}

/// Reads are this fraction of ops for the write-dominant structures.
const LIGHT_READ_FRACTION: f64 = 0.1;

/// Generates `n` ops over a memory of `mem_size` bytes.
pub fn gen_trace(kind: WorkloadKind, n: usize, seed: u64, mem_size: u64) -> Result<Trace> {
    if n == 0 {
        return Err(Error::Config("trace length must be positive".into()));
    }
    let blocks = mem_size / BLOCK_BYTES as u64;
    if blocks == 0 {
        return Err(Error::Config("memory too small for a trace".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut b = Builder { ops: Vec::with_capacity(n), seed, blocks };
    let light = |rng: &mut ChaCha8Rng| if rng.gen_bool(LIGHT_READ_FRACTION) { OpKind::Read } else { OpKind::Write };

    match kind {
        WorkloadKind::Seqwrite => (0..n as u64).for_each(|i| b.push(OpKind::Write, i)),
        WorkloadKind::Randwrite => {
            for _ in 0..n {
                let block = rng.gen_range(0..blocks);
                b.push(OpKind::Write, block);
            }
        }
        WorkloadKind::Array => {
            // 128-byte elements walked in order, wrapping within the array
            let len = (blocks / 2).clamp(1, 1 << 16);
            let base = rng.gen_range(0..blocks);
            for i in 0..n as u64 {
                let k = light(&mut rng);
                b.push(k, base + 2 * (i % len));
            }
        }
        WorkloadKind::Queue => {
            let ring = blocks.clamp(1, 1 << 14);
            let base = rng.gen_range(0..blocks);
            let (mut head, mut tail) = (0u64, 0u64);
            for i in 0..n {
                let k = light(&mut rng);
                if i % 2 == 0 {
                    b.push(k, base + tail % ring);
                    tail += 1;
                } else {
                    b.push(k, base + head % ring);
                    head += 1;
                }
            }
        }
        WorkloadKind::Hash => {
            for _ in 0..n {
                let k = light(&mut rng);
                let block = rng.gen_range(0..blocks);
                b.push(k, block);
            }
        }
        WorkloadKind::Btree | WorkloadKind::Rbtree => {
            // nodes are 4 blocks (btree) or 1 block (rbtree); lookups chase
            // a root-to-leaf path, then update popular nodes
            let (node_blocks, depth, fanout) = if kind == WorkloadKind::Btree { (4, 4, 16) } else { (1, 10, 2) };
            let nodes = (blocks / node_blocks).clamp(1, 1 << 15);
            let zipf = Zipf::new(nodes, 1.0).expect("valid zipf parameters");
            let base = rng.gen_range(0..blocks);
            while b.ops.len() < n {
                let mut node = 0u64;
                for _ in 0..depth {
                    b.push(OpKind::Read, base + (node % nodes) * node_blocks);
                    node = node * fanout + 1 + rng.gen_range(0..fanout);
                }
                for _ in 0..depth {
                    let hot = zipf.sample(&mut rng) as u64 - 1;
                    let block = base + hot * node_blocks + rng.gen_range(0..node_blocks);
                    b.push(OpKind::Write, block);
                }
            }
            b.ops.truncate(n);
        }
    }
    Ok(Trace { ops: b.ops, seed, label: format!("{kind}:{n}") })
}

/// Parses the trace file format. With `mem_size`, addresses are also range
/// checked.
pub fn parse_trace(text: &str, seed: u64, mem_size: Option<u64>) -> Result<Trace> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::Trace { line, message };
        let body = raw.split('#').next().unwrap().trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let kind = match fields.next().unwrap() {
            "W" | "w" => OpKind::Write,
            "R" | "r" => OpKind::Read,
            other => return Err(err(format!("unknown op `{other}`"))),
        };
        let addr_text = fields.next().ok_or_else(|| err("missing address".into()))?;
        let digits = addr_text.strip_prefix("0x").or_else(|| addr_text.strip_prefix("0X")).unwrap_or(addr_text);
        let value = u64::from_str_radix(digits, 16).map_err(|e| err(format!("bad address `{addr_text}`: {e}")))?;
        let addr = Address::new(value);
        if !addr.is_aligned() {
            return Err(err(format!("address {addr} is not 64-byte aligned")));
        }
        if mem_size.is_some_and(|m| value >= m) {
            return Err(err(format!("address {addr} is out of range")));
        }
        let payload = match (kind, fields.next()) {
            (OpKind::Read, Some(_)) => return Err(err("reads take no payload".into())),
            (OpKind::Read, None) => DataBlock::ZERO,
            (OpKind::Write, None) => default_payload(addr, ops.len() as u64, seed),
            (OpKind::Write, Some(p)) => DataBlock(unhex(p).ok_or_else(|| err("payload must be 128 hex digits".into()))?),
        };
        if fields.next().is_some() {
            return Err(err("trailing fields".into()));
        }
        ops.push(TraceOp { kind, addr, payload });
    }
    Ok(Trace { ops, seed, label: "file".into() })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; BLOCK_BYTES]> {
    if s.len() != 2 * BLOCK_BYTES || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; BLOCK_BYTES];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::TreeGeometry;

    const MEM: u64 = 16 << 30;

    #[test]
    fn deterministic() {
        for kind in WorkloadKind::ALL {
            assert_eq!(gen_trace(kind, 50, 3, MEM).unwrap(), gen_trace(kind, 50, 3, MEM).unwrap());
        }
        assert_ne!(gen_trace(WorkloadKind::Hash, 50, 3, MEM).unwrap(), gen_trace(WorkloadKind::Hash, 50, 4, MEM).unwrap());
    }

    #[test]
    fn seqwrite_is_sequential() {
        let t = gen_trace(WorkloadKind::Seqwrite, 100, 0, MEM).unwrap();
        assert_eq!(t.writes(), 100);
        for (i, op) in t.ops.iter().enumerate() {
            assert_eq!(op.addr.value(), 64 * i as u64);
        }
    }

    #[test]
    fn addresses_aligned_and_in_range() {
        let mem = 1 << 22;
        for kind in WorkloadKind::ALL {
            let t = gen_trace(kind, 2000, 9, mem).unwrap();
            assert_eq!(t.len(), 2000);
            assert!(t.ops.iter().all(|o| o.addr.is_aligned() && o.addr.value() < mem), "{kind}");
        }
    }

    #[test]
    fn tree_workloads_are_balanced() {
        for kind in [WorkloadKind::Btree, WorkloadKind::Rbtree] {
            let t = gen_trace(kind, 10_000, 1, MEM).unwrap();
            let w = t.writes() as f64 / t.len() as f64;
            assert!((w - 0.5).abs() < 0.02, "{kind}: {w}");
        }
    }

    #[test]
    fn hash_octants_roughly_uniform() {
        let g = TreeGeometry::new(MEM).unwrap();
        let n = 8000;
        let t = gen_trace(WorkloadKind::Hash, n, 5, MEM).unwrap();
        let mut counts = [0f64; 8];
        for op in &t.ops {
            counts[g.octant_of_leaf(g.leaf_of(op.addr))] += 1.0;
        }
        let expect = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
        // 7 degrees of freedom, p = 0.001
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn parse_examples() {
        let t = parse_trace("W 0x1000\n", 0, None).unwrap();
        assert_eq!(t.ops.len(), 1);
        assert_eq!(t.ops[0].kind, OpKind::Write);
        assert_eq!(t.ops[0].payload, default_payload(Address::new(0x1000), 0, 0));

        let t = parse_trace("# header\n\nW 0x1000\nR 0x1000  # read back\n", 0, None).unwrap();
        assert_eq!(t.ops[1].kind, OpKind::Read);

        assert_eq!(
            parse_trace("W 0x1001\n", 0, None),
            Err(Error::Trace { line: 1, message: "address 0x1001 is not 64-byte aligned".into() })
        );
        assert!(matches!(parse_trace("R 0x0\nX 0x40\n", 0, None), Err(Error::Trace { line: 2, .. })));
        assert!(matches!(parse_trace("W 0x40 abcd\n", 0, None), Err(Error::Trace { line: 1, .. })));
        assert!(matches!(parse_trace("W 0x400\n", 0, Some(0x400)), Err(Error::Trace { line: 1, .. })));
    }

    #[test]
    fn text_round_trip() {
        let t = gen_trace(WorkloadKind::Btree, 40, 2, MEM).unwrap();
        let back = parse_trace(&t.to_text(), 2, Some(MEM)).unwrap();
        assert_eq!(back.ops, t.ops);
    }
}
