//! Crash sweeps and tamper fuzzing over a trace.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{recover, recover_counters, tamper, AttackKind, RecoveryStatus, TamperMode, TamperSpec};
use crate::config::Config;
use crate::controller::Controller;
use crate::crypto::SecretKey;
use crate::error::{Error, Result};
use crate::metadata::{RootRegister, BLOCKS_PER_COUNTER};
use crate::nvm::NvmImage;
use crate::workloads::Trace;

/// Longest trace accepted for exhaustive sweeps.
pub const MAX_SWEEP_EVENTS: usize = 10_000;

/// Distance back in events of roll-back and replay snapshots.
const ROLLBACK_WINDOW: u64 = 5;
const REPLAY_DISTANCE: u64 = 100;

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepSummary {
    pub points: usize,
    pub clean: usize,
    pub failures: Vec<(u64, RecoveryStatus)>,
    pub max_osiris_increments: u64,
}

impl SweepSummary {
    pub fn all_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

fn guard(trace: &Trace) -> Result<()> {
    if trace.len() > MAX_SWEEP_EVENTS {
        return Err(Error::Config(format!("{} events exceed the sweep limit of {MAX_SWEEP_EVENTS}", trace.len())));
    }
    Ok(())
}

/// Crashes and recovers at every event boundary of `trace`.
pub fn crash_sweep(config: &Config, trace: &Trace) -> Result<SweepSummary> {
    guard(trace)?;
    let mut ctl = Controller::new(config.clone())?;
    let mut summary = SweepSummary::default();
    let mut check = |ctl: &Controller, point: u64| -> Result<()> {
        let (image, root) = ctl.drain_on_crash();
        let v = recover(ctl.key(), &image, &root, config.osiris_limit)?;
        summary.points += 1;
        summary.max_osiris_increments = summary.max_osiris_increments.max(v.osiris_increments);
        if v.is_clean() {
            summary.clean += 1;
        } else {
            summary.failures.push((point, v.status));
        }
        Ok(())
    };
    check(&ctl, 0)?;
    for (i, op) in trace.ops.iter().enumerate() {
        ctl.step(op)?;
        check(&ctl, i as u64 + 1)?;
    }
    Ok(summary)
}

/// Leaf sums of an image after counter recovery.
pub fn recovered_sums(key: &SecretKey, image: &NvmImage, limit: u32) -> Result<BTreeMap<u64, u64>> {
    let mut sums = BTreeMap::new();
    for &leaf in image.counters.keys() {
        sums.insert(leaf, image.counter_block(leaf)?.leaf_sum().0);
    }
    for (leaf, block) in recover_counters(key, image, limit)?.blocks {
        sums.insert(leaf, block.leaf_sum().0);
    }
    Ok(sums)
}

#[derive(Clone, Debug, Serialize)]
pub struct FuzzCase {
    pub crash_point: u64,
    pub spec: TamperSpec,
    pub status: RecoveryStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ModeTally {
    pub cases: usize,
    pub hmac_class: usize,
    pub root_class: usize,
    pub unrecoverable: usize,
    pub missed: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FuzzSummary {
    pub cases: usize,
    pub detected: usize,
    pub missed: usize,
    pub hmac_class: usize,
    pub root_class: usize,
    pub unrecoverable: usize,
    pub by_mode: BTreeMap<String, ModeTally>,
    pub misses: Vec<FuzzCase>,
}

impl FuzzSummary {
    pub fn mode(&self, mode: TamperMode) -> ModeTally {
        self.by_mode.get(&format!("{mode:?}")).cloned().unwrap_or_default()
    }
}

struct Run {
    key: SecretKey,
    images: Vec<(NvmImage, RootRegister)>,
    sums: Vec<Option<BTreeMap<u64, u64>>>,
    limit: u32,
}

impl Run {
    fn sums(&mut self, point: u64) -> Result<&BTreeMap<u64, u64>> {
        let i = point as usize;
        if self.sums[i].is_none() {
            self.sums[i] = Some(recovered_sums(&self.key, &self.images[i].0, self.limit)?);
        }
        Ok(self.sums[i].as_ref().unwrap())
    }

    /// Leaves whose recovered sum differs between two crash points.
    fn changed(&mut self, old: u64, new: u64) -> Result<Vec<u64>> {
        let a = self.sums(old)?.clone();
        let b = self.sums(new)?;
        let keys: BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
        Ok(keys.into_iter().filter(|k| a.get(k).unwrap_or(&0) != b.get(k).unwrap_or(&0)).collect())
    }
}

fn pick_case(run: &mut Run, mode: TamperMode, rng: &mut ChaCha8Rng) -> Result<Option<(u64, TamperSpec)>> {
    let events = run.images.len() as u64 - 1;
    for _ in 0..1000 {
        let point = rng.gen_range(1..=events);
        let snapshot = match mode {
            TamperMode::RollBack => Some(point - rng.gen_range(1..=ROLLBACK_WINDOW.min(point))),
            TamperMode::Replay | TamperMode::Mixed => Some(point.saturating_sub(REPLAY_DISTANCE)),
            TamperMode::RollForward | TamperMode::RandomBytes => None,
        };
        let candidates: Vec<u64> = match snapshot {
            Some(s) => run.changed(s, point)?,
            None => {
                let image = &run.images[point as usize].0;
                let leaves: BTreeSet<u64> = image.data.keys().map(|b| b / BLOCKS_PER_COUNTER as u64).collect();
                leaves.into_iter().collect()
            }
        };
        if let Some(&target) = candidates.choose(rng) {
            return Ok(Some((point, TamperSpec { target, mode, snapshot })));
        }
    }
    Ok(None)
}

/// Random crash point plus random tamper, `n_cases` times; tallies how each
/// case was caught.
pub fn attack_fuzz(config: &Config, trace: &Trace, n_cases: usize, seed: u64, modes: &[TamperMode]) -> Result<FuzzSummary> {
    guard(trace)?;
    if n_cases == 0 || modes.is_empty() {
        return Err(Error::Config("attack fuzz needs at least one case and one mode".into()));
    }
    if trace.writes() == 0 {
        return Err(Error::Config("attack fuzz needs a trace with writes".into()));
    }
    let mut ctl = Controller::new(config.clone())?;
    let mut images = vec![ctl.drain_on_crash()];
    for op in &trace.ops {
        ctl.step(op)?;
        images.push(ctl.drain_on_crash());
    }
    let n = images.len();
    let mut run = Run { key: *ctl.key(), images, sums: vec![None; n], limit: config.osiris_limit };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = FuzzSummary::default();

    for _ in 0..n_cases {
        let mode = *modes.choose(&mut rng).unwrap();
        let Some((point, spec)) = pick_case(&mut run, mode, &mut rng)? else {
            return Err(Error::Config(format!("trace offers no target for {mode:?} tampering")));
        };
        let (image, root) = &run.images[point as usize];
        let snapshot = spec.snapshot.map(|s| &run.images[s as usize].0);
        let tampered = tamper(image, &spec, snapshot, &mut rng);
        let status = recover(&run.key, &tampered, root, run.limit)?.status;

        let tally = summary.by_mode.entry(format!("{mode:?}")).or_default();
        tally.cases += 1;
        summary.cases += 1;
        match status {
            RecoveryStatus::Clean => {
                tally.missed += 1;
                summary.missed += 1;
                summary.misses.push(FuzzCase { crash_point: point, spec, status });
                continue;
            }
            RecoveryStatus::AttackDetected(AttackKind::RollForward) => {
                tally.hmac_class += 1;
                summary.hmac_class += 1;
            }
            RecoveryStatus::AttackDetected(AttackKind::RollBack) => {
                tally.root_class += 1;
                summary.root_class += 1;
            }
            RecoveryStatus::UnrecoverableCounter(_) => {
                tally.unrecoverable += 1;
                summary.unrecoverable += 1;
            }
        }
        summary.detected += 1;
    }
    Ok(summary)
}
