//! Run summaries and their CSV / JSON renderings.
//!
//! CSV columns are fixed; the first column carries the schema version so
//! downstream tooling can detect layout changes.

use serde::Serialize;

use crate::config::{Config, UpdateScheme};
use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::workloads::Trace;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scheme: UpdateScheme,
    pub trace: String,
    pub ops: u64,
    pub writes: u64,
    pub reads: u64,
    pub total_cycles: u64,
    pub avg_write_latency_cycles: f64,
    pub avg_read_latency_cycles: f64,
    pub metadata_cache_hit_ratio: f64,
    pub metadata_write_fraction: f64,
    pub hash_count: u64,
    pub path_hashes: u64,
    pub tree_node_reads: u64,
    pub counter_reads: u64,
    pub stalls: u64,
    pub stall_cycles: u64,
    pub tag_refills: u64,
    pub background_cycles: u64,
    pub overflows: u64,
    /// Live root after background work drains, octants joined by `:`.
    pub root: String,
}

impl RunReport {
    pub fn from_controller(ctl: &Controller, trace_label: &str) -> Self {
        let l = ctl.ledger();
        let cache = ctl.tree().cache();
        let accesses = cache.hits() + cache.misses();
        Self {
            schema_version: SCHEMA_VERSION,
            scheme: ctl.scheme(),
            trace: trace_label.to_string(),
            ops: l.reads + l.writes,
            writes: l.writes,
            reads: l.reads,
            total_cycles: l.total_cycles,
            avg_write_latency_cycles: l.avg_write_latency(),
            avg_read_latency_cycles: l.avg_read_latency(),
            metadata_cache_hit_ratio: if accesses == 0 { 0.0 } else { cache.hits() as f64 / accesses as f64 },
            metadata_write_fraction: l.metadata_write_fraction(),
            hash_count: l.hashes,
            path_hashes: l.path_hashes,
            tree_node_reads: l.tree_node_reads,
            counter_reads: l.counter_reads,
            stalls: l.stalls,
            stall_cycles: l.stall_cycles,
            tag_refills: l.tag_refills,
            background_cycles: l.background_cycles,
            overflows: l.overflows,
            root: ctl.root().counters.iter().map(|c| format!("{c:x}")).collect::<Vec<_>>().join(":"),
        }
    }
}

/// Runs `trace` under `config`, drains background work and summarizes.
pub fn simulate(config: &Config, trace: &Trace) -> Result<(RunReport, Controller)> {
    let mut ctl = Controller::new(config.clone())?;
    ctl.run(trace)?;
    ctl.finish()?;
    Ok((RunReport::from_controller(&ctl, &trace.label), ctl))
}

/// Columns normalized to a baseline report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Normalized {
    pub norm_write_latency: f64,
    pub norm_read_latency: f64,
    pub norm_total_cycles: f64,
    pub norm_hash_count: f64,
}

impl Normalized {
    pub fn against(r: &RunReport, base: &RunReport) -> Self {
        let div = |a: f64, b: f64| if b == 0.0 { if a == 0.0 { 1.0 } else { f64::INFINITY } } else { a / b };
        Self {
            norm_write_latency: div(r.avg_write_latency_cycles, base.avg_write_latency_cycles),
            norm_read_latency: div(r.avg_read_latency_cycles, base.avg_read_latency_cycles),
            norm_total_cycles: div(r.total_cycles as f64, base.total_cycles as f64),
            norm_hash_count: div(r.hash_count as f64, base.hash_count as f64),
        }
    }
}

#[derive(Serialize)]
struct Row<'a> {
    #[serde(flatten)]
    report: &'a RunReport,
    #[serde(flatten)]
    norm: Option<Normalized>,
}

fn row_value(r: &RunReport, baseline: Option<&RunReport>) -> serde_json::Map<String, serde_json::Value> {
    let norm = baseline.map(|b| Normalized::against(r, b));
    let serde_json::Value::Object(map) = serde_json::to_value(Row { report: r, norm }).expect("report serializes") else {
        unreachable!("reports serialize as objects")
    };
    map
}

/// CSV with a header row. With a baseline, normalized columns follow.
pub fn to_csv(reports: &[RunReport], baseline: Option<&RunReport>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    for (i, r) in reports.iter().enumerate() {
        let row = row_value(r, baseline);
        if i == 0 {
            w.write_record(row.keys()).map_err(csv_err)?;
        }
        let cells = row.values().map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        });
        w.write_record(cells).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// JSON document: the config echo plus every report.
pub fn to_json(config: &Config, reports: &[RunReport], baseline: Option<&RunReport>) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        schema_version: u32,
        config: &'a Config,
        reports: Vec<serde_json::Map<String, serde_json::Value>>,
    }
    let rows = reports.iter().map(|r| row_value(r, baseline)).collect();
    serde_json::to_string_pretty(&Doc { schema_version: SCHEMA_VERSION, config, reports: rows })
        .map_err(|e| Error::Config(format!("json: {e}")))
}
