//! Crash injection, tampering, counter recovery and the recovery verdict.

mod harness;
mod tamper;

use std::collections::BTreeMap;

use serde::Serialize;

pub use harness::{
    attack_fuzz, crash_sweep, recovered_sums, FuzzCase, FuzzSummary, ModeTally, SweepSummary, MAX_SWEEP_EVENTS,
};
pub use tamper::{tamper, tamper_seeded, TamperMode, TamperSpec};

use crate::config::Config;
use crate::controller::Controller;
use crate::crypto::{data_mac, SecretKey};
use crate::error::{Error, Result};
use crate::metadata::{Address, CounterBlock, RootRegister, BLOCKS_PER_COUNTER};
use crate::nvm::NvmImage;
use crate::tree::{bmt_fold, bmt_leaf_digest, reconstruct, reconstruct_with, ReconstructionReport, Verdict};
use crate::workloads::Trace;

/// Power is lost after `event_index` completed operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CrashPoint {
    pub event_index: u64,
}

/// How an attack was caught.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum AttackKind {
    /// Leaf MAC mismatch.
    RollForward,
    /// Rebuilt root disagrees with the on-chip root.
    RollBack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RecoveryStatus {
    Clean,
    AttackDetected(AttackKind),
    /// No counter within the recovery window reproduces this block's MAC.
    UnrecoverableCounter(Address),
}

#[derive(Clone, Debug)]
pub struct RecoveryVerdict {
    pub status: RecoveryStatus,
    pub report: Option<ReconstructionReport>,
    pub recovered: BTreeMap<u64, CounterBlock>,
    /// Total minor increments Osiris had to apply.
    pub osiris_increments: u64,
}

impl RecoveryVerdict {
    pub fn is_clean(&self) -> bool {
        self.status == RecoveryStatus::Clean
    }
}

/// Counter blocks recovered from data MACs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecoveredCounters {
    pub blocks: BTreeMap<u64, CounterBlock>,
    pub increments: u64,
}

/// Runs `trace` up to the crash point and returns what survives.
pub fn crash(config: &Config, trace: &Trace, at: CrashPoint) -> Result<(NvmImage, RootRegister)> {
    let events = trace.ops.len() as u64;
    if at.event_index > events {
        return Err(Error::CrashPoint { point: at.event_index, events });
    }
    let mut ctl = Controller::new(config.clone())?;
    let prefix = Trace { ops: trace.ops[..at.event_index as usize].to_vec(), ..trace.clone() };
    ctl.run(&prefix)?;
    Ok(ctl.drain_on_crash())
}

/// Osiris-style recovery: each written block's minor is advanced from its
/// stored value until the data MAC matches, at most `limit` steps.
pub fn recover_counters(key: &SecretKey, image: &NvmImage, limit: u32) -> Result<RecoveredCounters> {
    let mut out = RecoveredCounters::default();
    for (&block, ciphertext) in &image.data {
        let leaf = block / BLOCKS_PER_COUNTER as u64;
        let slot = (block % BLOCKS_PER_COUNTER as u64) as usize;
        if !out.blocks.contains_key(&leaf) {
            out.blocks.insert(leaf, image.counter_block(leaf)?);
        }
        let stored = image.counter_block(leaf)?;
        let addr = Address::from_block_index(block);
        let Some(&tag) = image.data_macs.get(&block) else {
            return Err(Error::DataMacMismatch(addr));
        };
        let mut found = None;
        for k in 0..=limit {
            let m = stored.minors[slot] + k;
            let (major, minor) =
                if m < stored.minor_limit() { (stored.major, m) } else { (stored.major + 1, m - stored.minor_limit()) };
            if data_mac(key, addr, ciphertext, major, minor) == tag {
                found = Some((k, major, minor));
                break;
            }
        }
        let (k, major, minor) = found.ok_or(Error::DataMacMismatch(addr))?;
        let rec = out.blocks.get_mut(&leaf).unwrap();
        rec.major = rec.major.max(major);
        rec.minors[slot] = minor;
        out.increments += u64::from(k);
    }
    for &block in image.data_macs.keys() {
        if !image.data.contains_key(&block) {
            return Err(Error::DataMacMismatch(Address::from_block_index(block)));
        }
    }
    Ok(out)
}

/// Full recovery pipeline: leaf MAC check, counter recovery, tree
/// reconstruction against the root, then a data MAC sweep.
///
/// A leaf MAC failure outranks everything else, so a replay combined with a
/// roll-forward reports as a roll-forward.
pub fn recover(key: &SecretKey, image: &NvmImage, root: &RootRegister, osiris_limit: u32) -> Result<RecoveryVerdict> {
    let bmt = image.scheme.is_bmt();
    let mut verdict =
        RecoveryVerdict { status: RecoveryStatus::Clean, report: None, recovered: BTreeMap::new(), osiris_increments: 0 };

    let leaf_check = if bmt { None } else { Some(reconstruct(key, image, root)?) };
    let leaf_mac_failed = match &leaf_check {
        Some(report) => !report.hmac_failures.is_empty(),
        None => bmt_digest_failures(key, image)?,
    };
    if leaf_mac_failed {
        verdict.status = RecoveryStatus::AttackDetected(AttackKind::RollForward);
        verdict.report = leaf_check;
        return Ok(verdict);
    }

    let recovered = match recover_counters(key, image, osiris_limit) {
        Ok(r) => r,
        Err(Error::DataMacMismatch(addr)) => {
            verdict.status = RecoveryStatus::UnrecoverableCounter(addr);
            return Ok(verdict);
        }
        Err(e) => return Err(e),
    };
    verdict.osiris_increments = recovered.increments;

    let root_match = if bmt {
        let mut leaves = BTreeMap::new();
        for &leaf in image.counters.keys() {
            leaves.insert(leaf, image.counter_block(leaf)?);
        }
        leaves.extend(recovered.blocks.clone());
        bmt_fold(key, &image.geometry, &leaves, image.minor_bits) == *root
    } else {
        let report = reconstruct_with(key, image, root, &recovered.blocks)?;
        let ok = report.verdict == Verdict::Clean;
        verdict.report = Some(report);
        ok
    };
    verdict.recovered = recovered.blocks;
    if !root_match {
        verdict.status = RecoveryStatus::AttackDetected(AttackKind::RollBack);
        return Ok(verdict);
    }
    if let Some(addr) = data_sweep(key, image, &verdict.recovered) {
        verdict.status = RecoveryStatus::UnrecoverableCounter(addr);
    }
    Ok(verdict)
}

fn bmt_digest_failures(key: &SecretKey, image: &NvmImage) -> Result<bool> {
    let mut leaves: Vec<u64> = image.counters.keys().chain(image.leaf_macs.keys()).copied().collect();
    leaves.sort_unstable();
    leaves.dedup();
    for leaf in leaves {
        let block = image.counter_block(leaf)?;
        if image.leaf_macs.get(&leaf) != Some(&bmt_leaf_digest(key, &block)) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Every stored block must verify under its recovered counter.
fn data_sweep(key: &SecretKey, image: &NvmImage, recovered: &BTreeMap<u64, CounterBlock>) -> Option<Address> {
    for (&block, ct) in &image.data {
        let leaf = block / BLOCKS_PER_COUNTER as u64;
        let slot = (block % BLOCKS_PER_COUNTER as u64) as usize;
        let addr = Address::from_block_index(block);
        let Some(c) = recovered.get(&leaf) else { return Some(addr) };
        if image.data_macs.get(&block) != Some(&data_mac(key, addr, ct, c.major, c.minors[slot])) {
            return Some(addr);
        }
    }
    None
}

/// Largest gap, over written blocks, between the authoritative minor and the
/// one stored in `image`.
pub fn staleness(ctl: &Controller, image: &NvmImage) -> Result<u32> {
    let mut worst = 0;
    for &block in image.data.keys() {
        let leaf = block / BLOCKS_PER_COUNTER as u64;
        let slot = (block % BLOCKS_PER_COUNTER as u64) as usize;
        let truth = ctl.current_counter_block(leaf)?;
        let stored = image.counter_block(leaf)?;
        let gap = if truth.major == stored.major {
            truth.minors[slot].saturating_sub(stored.minors[slot])
        } else {
            u32::MAX
        };
        worst = worst.max(gap);
    }
    Ok(worst)
}
