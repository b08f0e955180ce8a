use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Error;
use crate::metadata::{CounterBlock, BLOCKS_PER_COUNTER};
use crate::nvm::NvmImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TamperMode {
    /// Raise one stored counter.
    RollForward,
    /// Restore a region from a recent snapshot.
    RollBack,
    /// Restore a region from a much older snapshot.
    Replay,
    /// Replay one region, then roll its counter forward.
    Mixed,
    /// Flip bits in one stored field of the region.
    RandomBytes,
}

impl TamperMode {
    pub const ALL: [TamperMode; 5] =
        [TamperMode::RollForward, TamperMode::RollBack, TamperMode::Replay, TamperMode::Mixed, TamperMode::RandomBytes];

    pub fn needs_snapshot(self) -> bool {
        matches!(self, TamperMode::RollBack | TamperMode::Replay | TamperMode::Mixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            TamperMode::RollForward => "roll-forward",
            TamperMode::RollBack => "roll-back",
            TamperMode::Replay => "replay",
            TamperMode::Mixed => "mixed",
            TamperMode::RandomBytes => "random-bytes",
        }
    }
}

impl fmt::Display for TamperMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TamperMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tamper mode `{s}`")))
    }
}

/// An attack on the NVM-resident state of one 4 KiB region (one counter
/// block, its leaf MAC, 64 data blocks and their MACs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TamperSpec {
    pub target: u64,
    pub mode: TamperMode,
    /// Crash point of the snapshot used by snapshot modes.
    pub snapshot: Option<u64>,
}

/// Applies `spec`. Snapshot modes copy the region from `snapshot`, which
/// must be given for them.
pub fn tamper<R: Rng>(image: &NvmImage, spec: &TamperSpec, snapshot: Option<&NvmImage>, rng: &mut R) -> NvmImage {
    let mut out = image.clone();
    let leaf = spec.target;
    match spec.mode {
        TamperMode::RollForward => roll_forward(&mut out, leaf, rng),
        TamperMode::RollBack | TamperMode::Replay => {
            restore_region(&mut out, snapshot.expect("snapshot mode needs a snapshot"), leaf)
        }
        TamperMode::Mixed => {
            restore_region(&mut out, snapshot.expect("snapshot mode needs a snapshot"), leaf);
            roll_forward(&mut out, leaf, rng);
        }
        TamperMode::RandomBytes => random_bytes(&mut out, leaf, rng),
    }
    out
}

/// [`tamper`] with its randomness drawn from `seed`.
pub fn tamper_seeded(image: &NvmImage, spec: &TamperSpec, snapshot: Option<&NvmImage>, seed: u64) -> NvmImage {
    tamper(image, spec, snapshot, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn roll_forward<R: Rng>(image: &mut NvmImage, leaf: u64, rng: &mut R) {
    let mut block = image.counter_block(leaf).unwrap_or_else(|_| CounterBlock::new(image.minor_bits));
    let slot = rng.gen_range(0..BLOCKS_PER_COUNTER);
    if block.minors[slot] + 1 < block.minor_limit() {
        block.minors[slot] += 1;
    } else {
        block.major += 1;
    }
    image.counters.insert(leaf, block.encode());
}

fn region(leaf: u64) -> std::ops::Range<u64> {
    let first = leaf * BLOCKS_PER_COUNTER as u64;
    first..first + BLOCKS_PER_COUNTER as u64
}

fn restore_region(image: &mut NvmImage, old: &NvmImage, leaf: u64) {
    fn copy<V: Clone>(dst: &mut std::collections::BTreeMap<u64, V>, src: &std::collections::BTreeMap<u64, V>, k: u64) {
        match src.get(&k) {
            Some(v) => dst.insert(k, v.clone()),
            None => dst.remove(&k),
        };
    }
    copy(&mut image.counters, &old.counters, leaf);
    copy(&mut image.leaf_macs, &old.leaf_macs, leaf);
    for block in region(leaf) {
        copy(&mut image.data, &old.data, block);
        copy(&mut image.data_macs, &old.data_macs, block);
    }
}

fn random_bytes<R: Rng>(image: &mut NvmImage, leaf: u64, rng: &mut R) {
    let blocks: Vec<u64> = region(leaf).filter(|b| image.data.contains_key(b)).collect();
    let has_counter = image.counters.contains_key(&leaf);
    let mut fields = Vec::new();
    if has_counter {
        fields.extend([0, 1]);
    }
    if !blocks.is_empty() {
        fields.extend([2, 3]);
    }
    let flip = loop {
        let f: u8 = rng.gen();
        if f != 0 {
            break f;
        }
    };
    match fields.get(rng.gen_range(0..fields.len().max(1))).copied() {
        Some(0) => {
            let bytes = image.counters.get_mut(&leaf).unwrap();
            let i = rng.gen_range(0..bytes.len());
            bytes[i] ^= flip;
        }
        Some(1) => {
            let tag = image.leaf_macs.entry(leaf).or_default();
            tag.0 ^= u64::from(flip) << (8 * rng.gen_range(0..8));
        }
        Some(2) => {
            let block = blocks[rng.gen_range(0..blocks.len())];
            let ct = image.data.get_mut(&block).unwrap();
            ct.0[rng.gen_range(0..ct.0.len())] ^= flip;
        }
        Some(3) => {
            let block = blocks[rng.gen_range(0..blocks.len())];
            let tag = image.data_macs.entry(block).or_default();
            tag.0 ^= u64::from(flip) << (8 * rng.gen_range(0..8));
        }
        _ => {
            // nothing stored for this region: forge a counter block
            let mut block = CounterBlock::new(image.minor_bits);
            block.minors[rng.gen_range(0..BLOCKS_PER_COUNTER)] = 1;
            image.counters.insert(leaf, block.encode());
        }
    }
}
