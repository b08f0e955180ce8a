use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scue::failure::{
    attack_fuzz, crash, crash_sweep, recover, tamper_seeded, CrashPoint, RecoveryStatus, TamperMode, TamperSpec,
};
use scue::report::{simulate, to_csv, to_json, RunReport};
use scue::{gen_trace, parse_trace, Config, NvmImage, Trace, UpdateScheme, WorkloadKind};

#[derive(Parser)]
#[command(name = "scue", version, about = "Secure NVM memory controller simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trace and report latency and traffic.
    Run(RunArgs),
    /// Crash and recover at every event boundary.
    CrashSweep(Common),
    /// Random crash points with random tampering.
    AttackFuzz(FuzzArgs),
    /// Run the same trace under every scheme, normalized to scue.
    Compare(Common),
    /// Recover a saved crash image.
    Recover(RecoverArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<UpdateScheme>,
    /// Trace file.
    #[arg(long, conflicts_with = "gen")]
    trace: Option<PathBuf>,
    /// Generated trace, e.g. `btree:1000`.
    #[arg(long, value_name = "KIND:N")]
    gen: Option<GenSpec>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hash_cycles: Option<u64>,
    /// `csv:<path>` or `json:<path>`; `-` is stdout. Repeatable.
    #[arg(long, value_name = "FORMAT:PATH")]
    out: Vec<OutSpec>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Lose power after this many events, then recover.
    #[arg(long)]
    crash_at: Option<u64>,
    /// Tamper with the crash image: `<mode>[:<leaf>][@<event>]`.
    #[arg(long, requires = "crash_at")]
    tamper: Option<TamperArg>,
    /// Save the crash image here.
    #[arg(long, requires = "crash_at")]
    image: Option<PathBuf>,
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    /// Comma-separated tamper modes; all by default.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<TamperMode>,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    image: PathBuf,
    /// Config the image was produced with (the key derives from its seed).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy)]
struct GenSpec {
    kind: WorkloadKind,
    n: usize,
}

impl FromStr for GenSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, n) = s.split_once(':').ok_or("expected KIND:N")?;
        let kind = kind.parse::<WorkloadKind>().map_err(|e| e.to_string())?;
        let n = n.parse().map_err(|e| format!("bad op count `{n}`: {e}"))?;
        Ok(Self { kind, n })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone)]
struct OutSpec {
    format: Format,
    path: PathBuf,
}

impl FromStr for OutSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (format, path) = s.split_once(':').ok_or("expected csv:<path> or json:<path>")?;
        let format = match format {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(format!("unknown output format `{other}`")),
        };
        Ok(Self { format, path: path.into() })
    }
}

#[derive(Clone, Copy)]
struct TamperArg {
    mode: TamperMode,
    leaf: Option<u64>,
    snapshot: Option<u64>,
}

impl FromStr for TamperArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (head, snapshot) = match s.split_once('@') {
            Some((h, e)) => (h, Some(e.parse().map_err(|e| format!("bad snapshot event: {e}"))?)),
            None => (s, None),
        };
        let (mode, leaf) = match head.split_once(':') {
            Some((m, l)) => (m, Some(l.parse().map_err(|e| format!("bad leaf index: {e}"))?)),
            None => (head, None),
        };
        let mode = mode.parse::<TamperMode>().map_err(|e| e.to_string())?;
        if snapshot.is_some() && !mode.needs_snapshot() {
            return Err(format!("{mode} takes no snapshot event"));
        }
        Ok(Self { mode, leaf, snapshot })
    }
}

/// A check ran and failed; exits with status 2.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else { return Ok(Config::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn setup(c: &Common) -> Result<(Config, Trace)> {
    let mut config = load_config(c.config.as_deref())?;
    if let Some(s) = c.scheme {
        config.scheme = s;
    }
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(h) = c.hash_cycles {
        config.hash_cycles = h;
    }
    config.validate()?;
    let trace = match (&c.trace, c.gen) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut t = parse_trace(&text, config.seed, Some(config.mem_size))?;
            t.label = path.display().to_string();
            t
        }
        (None, Some(g)) => gen_trace(g.kind, g.n, config.seed, config.mem_size)?,
        (None, None) => bail!("one of --trace or --gen is required"),
    };
    Ok((config, trace))
}

fn emit(out: &OutSpec, body: &str) -> Result<()> {
    if out.path.as_os_str() == "-" {
        print!("{body}");
        return Ok(());
    }
    fs::write(&out.path, body).with_context(|| format!("writing {}", out.path.display()))
}

fn emit_reports(c: &Common, config: &Config, reports: &[RunReport], baseline: Option<&RunReport>) -> Result<()> {
    if c.out.is_empty() {
        print!("{}", to_csv(reports, baseline)?);
    }
    for out in &c.out {
        let body = match out.format {
            Format::Csv => to_csv(reports, baseline)?,
            Format::Json => to_json(config, reports, baseline)? + "\n",
        };
        emit(out, &body)?;
    }
    Ok(())
}

fn emit_summary(outs: &[OutSpec], summary: serde_json::Value) -> Result<()> {
    for out in outs {
        if out.format == Format::Csv {
            bail!("summaries are JSON only");
        }
        emit(out, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    }
    Ok(())
}

fn status_line(status: &RecoveryStatus) -> String {
    match status {
        RecoveryStatus::Clean => "clean".into(),
        RecoveryStatus::AttackDetected(kind) => format!("attack detected ({kind:?})"),
        RecoveryStatus::UnrecoverableCounter(addr) => format!("unrecoverable counter at {addr}"),
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (config, trace) = setup(&args.common)?;
    let Some(at) = args.crash_at else {
        let (report, _) = simulate(&config, &trace)?;
        return emit_reports(&args.common, &config, &[report], None);
    };
    let (mut image, root) = crash(&config, &trace, CrashPoint { event_index: at })?;
    if let Some(t) = args.tamper {
        let target = match t.leaf {
            Some(leaf) => leaf,
            None => trace.ops[..at as usize]
                .iter()
                .rev()
                .find(|op| op.kind == scue::OpKind::Write)
                .map(|op| image.geometry.leaf_of(op.addr))
                .ok_or_else(|| anyhow!("no write before event {at} to tamper with"))?,
        };
        let snapshot_at = match (t.mode, t.snapshot) {
            (_, Some(e)) if e > at => bail!("snapshot event {e} is after the crash point {at}"),
            (_, Some(e)) => Some(e),
            (TamperMode::RollBack, None) => Some(at.saturating_sub(1)),
            (TamperMode::Replay | TamperMode::Mixed, None) => Some(at.saturating_sub(100)),
            _ => None,
        };
        let snapshot = match snapshot_at {
            Some(e) => Some(crash(&config, &trace, CrashPoint { event_index: e })?.0),
            None => None,
        };
        let spec = TamperSpec { target, mode: t.mode, snapshot: snapshot_at };
        image = tamper_seeded(&image, &spec, snapshot.as_ref(), config.seed);
    }
    if let Some(path) = &args.image {
        fs::write(path, image.to_bytes(&root)).with_context(|| format!("writing {}", path.display()))?;
    }
    verdict(&config, &image, &root, &args.common.out)
}

fn verdict(config: &Config, image: &NvmImage, root: &scue::RootRegister, outs: &[OutSpec]) -> Result<()> {
    let key = scue::crypto::SecretKey::from_seed(config.seed);
    let v = recover(&key, image, root, config.osiris_limit)?;
    println!("recovery: {} (osiris increments {})", status_line(&v.status), v.osiris_increments);
    emit_summary(outs, serde_json::json!({ "status": v.status, "osiris_increments": v.osiris_increments }))?;
    if !v.is_clean() {
        return Err(CheckFailed(status_line(&v.status)).into());
    }
    Ok(())
}

fn cmd_sweep(c: &Common) -> Result<()> {
    let (config, trace) = setup(c)?;
    let s = crash_sweep(&config, &trace)?;
    println!("{} crash points, {} clean, {} failures", s.points, s.clean, s.failures.len());
    for (point, status) in &s.failures {
        println!("  event {point}: {}", status_line(status));
    }
    emit_summary(&c.out, serde_json::to_value(&s)?)?;
    if !s.all_clean() {
        return Err(CheckFailed(format!("{} crash points did not recover cleanly", s.failures.len())).into());
    }
    Ok(())
}

fn cmd_fuzz(args: &FuzzArgs) -> Result<()> {
    let (config, trace) = setup(&args.common)?;
    let modes = if args.modes.is_empty() { TamperMode::ALL.to_vec() } else { args.modes.clone() };
    let s = attack_fuzz(&config, &trace, args.cases, config.seed, &modes)?;
    println!(
        "{} cases, {} detected, {} missed (hmac {}, root {}, unrecoverable {})",
        s.cases, s.detected, s.missed, s.hmac_class, s.root_class, s.unrecoverable
    );
    emit_summary(&args.common.out, serde_json::to_value(&s)?)?;
    if s.missed > 0 {
        return Err(CheckFailed(format!("{} tampered images recovered as clean", s.missed)).into());
    }
    Ok(())
}

fn cmd_compare(c: &Common) -> Result<()> {
    let (config, trace) = setup(c)?;
    let schemes = [
        UpdateScheme::Eager,
        UpdateScheme::Lazy,
        UpdateScheme::LazyComputing,
        UpdateScheme::Scue,
        UpdateScheme::BmtEager,
    ];
    let reports = schemes
        .iter()
        .map(|&s| simulate(&config.clone().with_scheme(s), &trace).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()?;
    let base = reports.iter().find(|r| r.scheme == UpdateScheme::Scue).cloned();
    emit_reports(c, &config, &reports, base.as_ref())
}

fn cmd_recover(args: &RecoverArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let bytes = fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let (image, root) = NvmImage::from_bytes(&bytes)?;
    verdict(&config, &image, &root, &[])
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 2;
    }
    match err.downcast_ref::<scue::Error>() {
        Some(scue::Error::IntegrityViolation { .. } | scue::Error::DataMacMismatch(_) | scue::Error::TagMismatch { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::CrashSweep(c) => cmd_sweep(c),
        Command::AttackFuzz(a) => cmd_fuzz(a),
        Command::Compare(c) => cmd_compare(c),
        Command::Recover(a) => cmd_recover(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
