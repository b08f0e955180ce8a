//! Browser bindings for the simulator. Every export takes plain arguments
//! and returns a JSON string for the page to render.

use scue::crypto::SecretKey;
use scue::failure::{crash, crash_sweep, recover, tamper_seeded, CrashPoint, TamperMode, TamperSpec};
use scue::report::{simulate, Normalized};
use scue::{gen_trace, Config, OpKind, Trace, UpdateScheme, WorkloadKind};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const DEMO_MEM: u64 = 64 << 20;

fn setup(workload: &str, n: usize, seed: u64) -> Result<(Config, Trace), String> {
    let kind: WorkloadKind = workload.parse().map_err(|e: scue::Error| e.to_string())?;
    let config = Config { mem_size: DEMO_MEM, seed, ..Config::default() };
    let trace = gen_trace(kind, n, seed, config.mem_size).map_err(|e| e.to_string())?;
    Ok((config, trace))
}

pub fn compare_json(workload: &str, n: usize, seed: u64) -> Result<Value, String> {
    let (config, trace) = setup(workload, n, seed)?;
    let schemes = [UpdateScheme::Eager, UpdateScheme::Lazy, UpdateScheme::LazyComputing, UpdateScheme::Scue, UpdateScheme::BmtEager];
    let reports = schemes
        .iter()
        .map(|&s| simulate(&config.clone().with_scheme(s), &trace).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let base = reports.iter().find(|r| r.scheme == UpdateScheme::Scue).cloned().expect("scue is in the set");
    let rows = reports
        .iter()
        .map(|r| {
            let norm = Normalized::against(r, &base);
            json!({ "report": r, "normalized": norm })
        })
        .collect::<Vec<_>>();
    Ok(json!({ "workload": trace.label, "ops": trace.len(), "rows": rows }))
}

pub fn sweep_json(workload: &str, n: usize, seed: u64, scheme: &str) -> Result<Value, String> {
    let (config, trace) = setup(workload, n, seed)?;
    let scheme: UpdateScheme = scheme.parse().map_err(|e: scue::Error| e.to_string())?;
    let s = crash_sweep(&config.with_scheme(scheme), &trace).map_err(|e| e.to_string())?;
    Ok(json!({ "scheme": scheme.to_string(), "all_clean": s.all_clean(), "summary": s }))
}

pub fn tamper_json(workload: &str, n: usize, seed: u64, crash_at: u64, mode: &str) -> Result<Value, String> {
    let (config, trace) = setup(workload, n, seed)?;
    let mode: Option<TamperMode> = match mode {
        "" | "none" => None,
        m => Some(m.parse().map_err(|e: scue::Error| e.to_string())?),
    };
    let at = CrashPoint { event_index: crash_at };
    let (mut image, root) = crash(&config, &trace, at).map_err(|e| e.to_string())?;
    if let Some(mode) = mode {
        let target = trace.ops[..crash_at as usize]
            .iter()
            .rev()
            .find(|op| op.kind == OpKind::Write)
            .map(|op| image.geometry.leaf_of(op.addr))
            .ok_or_else(|| format!("no write before event {crash_at}"))?;
        let snapshot_at = match mode {
            TamperMode::RollBack => Some(crash_at.saturating_sub(1)),
            TamperMode::Replay | TamperMode::Mixed => Some(crash_at.saturating_sub(100)),
            _ => None,
        };
        let snapshot = match snapshot_at {
            Some(e) => Some(crash(&config, &trace, CrashPoint { event_index: e }).map_err(|e| e.to_string())?.0),
            None => None,
        };
        let spec = TamperSpec { target, mode, snapshot: snapshot_at };
        image = tamper_seeded(&image, &spec, snapshot.as_ref(), seed);
    }
    let key = SecretKey::from_seed(seed);
    let v = recover(&key, &image, &root, config.osiris_limit).map_err(|e| e.to_string())?;
    Ok(json!({
        "tamper": mode.map(|m| m.name()),
        "clean": v.is_clean(),
        "status": v.status,
        "osiris_increments": v.osiris_increments,
    }))
}

fn export(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

/// Runs one workload under each scheme and normalizes to SCUE.
#[wasm_bindgen]
pub fn compare(workload: &str, n: usize, seed: u64) -> Result<String, JsValue> {
    export(compare_json(workload, n, seed))
}

#[wasm_bindgen]
pub fn sweep(workload: &str, n: usize, seed: u64, scheme: &str) -> Result<String, JsValue> {
    export(sweep_json(workload, n, seed, scheme))
}

/// Crashes at `crash_at`, applies `mode` to the last written region and
/// runs recovery.
#[wasm_bindgen]
pub fn tamper(workload: &str, n: usize, seed: u64, crash_at: u64, mode: &str) -> Result<String, JsValue> {
    export(tamper_json(workload, n, seed, crash_at, mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_has_one_row_per_scheme() {
        let v = compare_json("hash", 200, 1).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn sweep_reports_lazy_as_unclean() {
        assert_eq!(sweep_json("queue", 100, 2, "scue").unwrap()["all_clean"], true);
        assert_eq!(sweep_json("queue", 100, 2, "lazy").unwrap()["all_clean"], false);
    }

    #[test]
    fn tampering_is_detected() {
        assert_eq!(tamper_json("btree", 300, 3, 200, "none").unwrap()["clean"], true);
        for mode in ["roll-forward", "roll-back", "replay", "mixed"] {
            assert_eq!(tamper_json("btree", 300, 3, 200, mode).unwrap()["clean"], false, "{mode}");
        }
    }

    #[test]
    fn bad_names_are_errors() {
        assert!(compare_json("nope", 10, 0).is_err());
        assert!(sweep_json("hash", 10, 0, "nope").is_err());
        assert!(tamper_json("hash", 10, 0, 5, "nope").is_err());
    }
}
