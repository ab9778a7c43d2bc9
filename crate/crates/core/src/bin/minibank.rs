use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use minibank::checkpoint::{CheckpointMode, CheckpointPolicy};
use minibank::harness::{
    crash_test, init_dir, open_dir, reference_stagger, run, summary, CheckpointTrigger, Checkpointing, CrashSpec,
    DataSpec, LogSpec, Rig, RigSpec, RunPlan, Warmup, CONFIG_FILE, DEFAULT_STAGGER_SCALE,
};
use minibank::metrics::{emit_csv, parse_csv, render_svg, Sample};
use minibank::wal::SimLogConfig;

#[derive(Parser)]
#[command(name = "minibank", version, about = "In-memory DebitCredit engine and benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Populate a bank in a directory.
    Init {
        #[arg(long, default_value_t = 100)]
        branches: u32,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the DebitCredit workload.
    Run(RunArgs),
    /// Crash, recover and check, repeatedly.
    Crashtest(CrashArgs),
    /// Recover a bank directory and check it.
    Recover {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Summarize a samples CSV and optionally chart it.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LogDeviceArg {
    File,
    Sim(Duration),
}

impl FromStr for LogDeviceArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "file" => Ok(LogDeviceArg::File),
            None if s == "sim" => Ok(LogDeviceArg::Sim(Duration::ZERO)),
            Some(("sim", us)) => us
                .parse::<u64>()
                .map(|us| LogDeviceArg::Sim(Duration::from_micros(us)))
                .map_err(|e| format!("{us:?}: {e}")),
            _ => Err(format!("log device {s:?} is not file or sim:LATENCY_US")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum CheckpointArg {
    Off,
    Mode(CheckpointMode),
}

impl FromStr for CheckpointArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(CheckpointArg::Off),
            _ => s.parse().map(CheckpointArg::Mode),
        }
    }
}

fn on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, default_value_t = 1)]
    streams: usize,
    /// Transactions per stream.
    #[arg(long)]
    txns: u64,
    /// Bank size when no directory bank is used.
    #[arg(long, default_value_t = 100)]
    branches: u32,
    #[arg(long, default_value_t = DEFAULT_STAGGER_SCALE)]
    stagger_scale: f64,
    #[arg(long, default_value = "none")]
    warmup: Warmup,
    #[arg(long, default_value = "off")]
    checkpoint: CheckpointArg,
    #[arg(long, default_value_t = 600.0)]
    recovery_interval_s: f64,
    /// Checkpoint once at this many seconds instead of on schedule.
    #[arg(long)]
    checkpoint_at_s: Option<f64>,
    #[arg(long, default_value = "off", value_parser = on_off)]
    messages: bool,
    #[arg(long, default_value = "sim:0")]
    log_device: LogDeviceArg,
    /// Simulated data device write latency.
    #[arg(long, default_value_t = 0)]
    data_latency_us: u64,
    /// Simulated log and data devices share one disk queue.
    #[arg(long)]
    shared_spindle: bool,
    /// Bank directory for the file log device.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    sample_period_s: f64,
    #[arg(long)]
    time_limit_s: Option<f64>,
    /// Recorded in the report; the engine keeps everything in memory.
    #[arg(long)]
    max_memory_mb: Option<u64>,
    /// Samples CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CrashArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// truncate:N, truncate:random, kill-after:K or kill-at:MS
    #[arg(long, default_value = "truncate:random")]
    mode: CrashSpec,
    #[arg(long, default_value_t = 1)]
    streams: usize,
    /// Transactions per stream.
    #[arg(long, default_value_t = 100)]
    txns: u64,
    #[arg(long, default_value_t = 1)]
    branches: u32,
    #[arg(long, default_value_t = 0)]
    log_latency_us: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn secs(s: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).with_context(|| format!("bad {what}: {s}"))
}

fn cmd_init(branches: u32, dir: &Path) -> Result<bool> {
    let started = Instant::now();
    let rig = init_dir(dir, branches)?;
    let snap = rig.engine.read_snapshot();
    println!(
        "initialized {}: {} branches, {} tellers, {} accounts in {:.2}s",
        dir.display(),
        snap.branch_count,
        snap.teller_count,
        snap.account_count,
        started.elapsed().as_secs_f64()
    );
    let cfg = rig.config();
    Ok(snap.branch_count == cfg.branches as u64
        && snap.teller_count == cfg.teller_count()
        && snap.account_count == cfg.account_count()
        && snap.is_conserved()
        && snap.account_sum.micros() == 0)
}

fn run_rig(args: &RunArgs) -> Result<Rig> {
    match (args.log_device, &args.dir) {
        (LogDeviceArg::File, Some(dir)) => {
            if !dir.join(CONFIG_FILE).exists() {
                init_dir(dir, args.branches)?;
            }
            let (rig, rec) = open_dir(dir)?;
            eprintln!("recovered {} transactions from {} in {:.3}s", rec.committed, dir.display(), rec.elapsed.as_secs_f64());
            Ok(rig)
        }
        (LogDeviceArg::File, None) => bail!("--log-device file needs --dir"),
        (LogDeviceArg::Sim(latency), _) => Ok(Rig::build(&RigSpec {
            scale: minibank::engine::ScaleConfig::new(args.branches),
            log: LogSpec::Sim(SimLogConfig { flush_latency: latency, ..Default::default() }),
            data: DataSpec::Sim { write_latency: Duration::from_micros(args.data_latency_us) },
            shared_spindle: args.shared_spindle,
        })?),
    }
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let rig = run_rig(args)?;
    let mut plan = RunPlan::new(args.streams, args.txns);
    plan.stagger = reference_stagger(args.streams, args.stagger_scale);
    plan.warmup = args.warmup;
    plan.messages = args.messages;
    plan.seed = args.seed;
    plan.sample_period = secs(args.sample_period_s, "sample period")?;
    plan.time_limit = args.time_limit_s.map(|s| secs(s, "time limit")).transpose()?;
    if let CheckpointArg::Mode(mode) = args.checkpoint {
        let policy = CheckpointPolicy::new(mode, secs(args.recovery_interval_s, "recovery interval")?);
        let trigger = match args.checkpoint_at_s {
            Some(t) => CheckpointTrigger::At(secs(t, "checkpoint time")?),
            None => CheckpointTrigger::Scheduled,
        };
        plan.checkpointing = Checkpointing::On { policy, trigger };
    }
    let mut out = run(&plan, &rig)?;
    if let Some(mb) = args.max_memory_mb {
        out.report.notes.push(format!("max memory {mb} MB (advisory)"));
    }
    if plan.warmup != Warmup::None {
        out.report.notes.push(format!("{} warm-up took {:.3}s", plan.warmup, out.warmup.elapsed.as_secs_f64()));
    }
    rig.engine.wal().flush_all()?;
    let conserved = rig.engine.read_snapshot().is_conserved();
    print!("{}", summary(&out.report));
    println!(" conservation: {}", if conserved { "ok" } else { "VIOLATED" });
    if let Some(path) = &args.out {
        emit_csv(&out.report, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.json {
        serde_json::to_writer_pretty(File::create(path)?, &out.report)?;
    }
    let rt_ok = out.report.rt_check.is_none_or(|f| f >= 0.9);
    Ok(out.report.complete && conserved && rt_ok)
}

fn cmd_crashtest(args: &CrashArgs) -> Result<bool> {
    let plan = RunPlan::new(args.streams, args.txns);
    let spec = RigSpec::sim(args.branches, Duration::from_micros(args.log_latency_us));
    let plan = RunPlan { seed: args.seed, ..plan };
    let verdict = crash_test(&plan, args.mode, args.trials, &spec)?;
    let failed: Vec<_> = verdict.failures().collect();
    println!("crashtest {:?}: {} of {} trials passed", args.mode, args.trials - failed.len(), args.trials);
    for t in failed.iter().take(10) {
        println!(" trial {} (seed {}): {}", t.trial, t.seed, t.transcript.join("; "));
    }
    Ok(verdict.passed())
}

fn cmd_recover(dir: &Path) -> Result<bool> {
    let (rig, rec) = open_dir(dir)?;
    let snap = rig.engine.read_snapshot();
    println!(
        "recovered {}: image begin {:?}, {} committed transactions redone, {} records scanned in {:.3}s, stop {:?}",
        dir.display(),
        rec.image_begin,
        rec.committed,
        rec.records_scanned,
        rec.elapsed.as_secs_f64(),
        rec.stop
    );
    if let Some(why) = &rec.image_rejected {
        println!(" image ignored: {why}");
    }
    println!(
        " sums: accounts {} tellers {} branches {} history {} ({} rows)",
        snap.account_sum, snap.teller_sum, snap.branch_sum, snap.history_sum, snap.history_count
    );
    println!(" conservation: {}", if snap.is_conserved() { "ok" } else { "VIOLATED" });
    Ok(snap.is_conserved())
}

fn cmd_report(input: &Path, svg: Option<&Path>) -> Result<bool> {
    let samples: Vec<Sample> =
        parse_csv(File::open(input).with_context(|| format!("opening {}", input.display()))?)?;
    let n = samples.len().max(1) as f64;
    let mean = |f: fn(&Sample) -> f64| samples.iter().map(f).sum::<f64>() / n;
    println!(
        "{} samples: mean tps {:.1}, max tps {:.1}, mean log flushes/s {:.1}, mean io/s {:.1}, mean cpu {:.2}",
        samples.len(),
        mean(|s| s.tps),
        samples.iter().map(|s| s.tps).fold(0.0, f64::max),
        mean(|s| s.log_flushes_per_s),
        mean(|s| s.io_per_s),
        mean(|s| s.cpu_frac)
    );
    if let Some(path) = svg {
        fs::write(path, render_svg(&samples))?;
        println!("wrote {}", path.display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Init { branches, dir } => cmd_init(*branches, dir),
        Command::Run(args) => cmd_run(args),
        Command::Crashtest(args) => cmd_crashtest(args),
        Command::Recover { dir } => cmd_recover(dir),
        Command::Report { input, svg } => cmd_report(input, svg.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("minibank: {e:#}");
            ExitCode::from(2)
        }
    }
}
