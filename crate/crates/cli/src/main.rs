//! Command-line front end: trace generation, engine runs, the fixed-window
//! baseline, and the delay / work experiments. All outputs are CSV (or trace
//! text) and deterministic under `--seed`; `PWW_SEED` is the fallback when
//! the flag is absent.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pww_core::bench::{
    run_baseline_fixed, run_delay_experiment, run_work_experiment, ExperimentConfig,
};
use pww_core::detect::detector_by_name;
use pww_core::pww::{cost_model_by_name, run_pww, ExecutionMode};
use pww_core::report::{delay_csv, ledger_csv, matches_csv, work_csv};
use pww_core::stream::StreamConfig;
use pww_core::synth::{gen_background, inject_episode, InjectionSpec, DEFAULT_ALPHABET};
use pww_core::trace::{parse_trace_str, write_trace, Record};

#[derive(Parser)]
#[command(
    name = "pww",
    about = "Progressive window widening over timestamped traces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace, optionally with an injected episode.
    Generate(GenerateArgs),
    /// Run the widening engine over a trace and emit match and ledger CSVs.
    Run(RunArgs),
    /// Run the fixed-duration sliding-window baseline over a trace.
    Baseline(BaselineArgs),
    /// Measure mean detection delay against episode duration.
    BenchDelay(BenchDelayArgs),
    /// Measure work rate against initial batch duration.
    BenchWork(BenchWorkArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Background length in records.
    #[arg(long)]
    n: usize,
    /// Background records per time unit.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Inject one remote-shell episode: `start=<t>,gap=<t>[,x=<fd>,y=<fd>,exe=<name>,span=<records>]`.
    /// span caps the episode's record span by thinning background inside the
    /// episode interval; without it the background is left untouched.
    #[arg(long)]
    inject: Option<String>,
    /// Comma-separated background syscall names.
    #[arg(long, value_delimiter = ',')]
    alphabet: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output trace file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EngineArgs {
    /// Initial batch duration in time units.
    #[arg(long, default_value_t = 1)]
    t0: u64,
    /// Maximum pattern length in records.
    #[arg(long, default_value_t = 100)]
    l_max: usize,
    /// Upper bound on pattern duration; sets the number of levels.
    #[arg(long, group = "levels")]
    t_max: Option<u64>,
    /// Number of levels, counting level 0.
    #[arg(long, group = "levels")]
    depth: Option<u32>,
    /// Detector name.
    #[arg(long, default_value = "remote-shell")]
    detector: String,
    /// Cost model name: linear, quadratic, or unit.
    #[arg(long, default_value = "linear")]
    cost: String,
}

impl EngineArgs {
    fn stream_config(&self) -> Result<StreamConfig> {
        let config = match (self.t_max, self.depth) {
            (Some(t_max), None) => StreamConfig::from_t_max(self.t0, self.l_max, t_max)?,
            (None, Some(depth)) => StreamConfig::from_depth(self.t0, self.l_max, depth)?,
            _ => bail!("exactly one of --t-max or --depth is required"),
        };
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Input trace file.
    #[arg(short, long)]
    input: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// sequential or concurrent; both produce identical output.
    #[arg(long, default_value = "sequential")]
    mode: ExecutionMode,
    #[arg(long, default_value = "matches.csv")]
    matches_out: PathBuf,
    #[arg(long, default_value = "ledger.csv")]
    ledger_out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// Input trace file.
    #[arg(short, long)]
    input: PathBuf,
    /// Window duration in time units.
    #[arg(long, default_value_t = 200)]
    window: u64,
    /// Window step in time units.
    #[arg(long, default_value_t = 100)]
    step: u64,
    #[arg(long, default_value = "remote-shell")]
    detector: String,
    #[arg(long, default_value = "linear")]
    cost: String,
    /// Write the match CSV here (summary always goes to stdout).
    #[arg(long)]
    matches_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchDelayArgs {
    /// Episode durations: a comma list ("4,8,12") or a doubling range
    /// ("4..512").
    #[arg(long)]
    durations: String,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 1)]
    t0: u64,
    #[arg(long, default_value_t = 100)]
    l_max: usize,
    #[arg(long, default_value_t = 1_024)]
    t_max: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchWorkArgs {
    /// Initial batch durations: a comma list ("1,2,4") or a doubling range
    /// ("1..32").
    #[arg(long)]
    t0: String,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 100)]
    l_max: usize,
    #[arg(long, default_value_t = 1_024)]
    t_max: u64,
    /// Baseline window duration.
    #[arg(long, default_value_t = 200)]
    window: u64,
    /// Baseline window step.
    #[arg(long, default_value_t = 100)]
    step: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::BenchDelay(args) => cmd_bench_delay(args),
        Command::BenchWork(args) => cmd_bench_work(args),
    }
}

/// `--seed` flag, else the `PWW_SEED` environment variable, else 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("PWW_SEED") {
        Ok(raw) => raw
            .parse::<u64>()
            .with_context(|| format!("PWW_SEED={raw:?} is not a non-negative integer")),
        Err(_) => Ok(0),
    }
}

fn load_trace(path: &PathBuf) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read trace file {}", path.display()))?;
    parse_trace_str(&text).with_context(|| format!("in trace file {}", path.display()))
}

fn emit(output: Option<&PathBuf>, csv: &str) -> Result<()> {
    match output {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let alphabet: Vec<&str> = if args.alphabet.is_empty() {
        DEFAULT_ALPHABET.to_vec()
    } else {
        args.alphabet.iter().map(String::as_str).collect()
    };
    let mut records = gen_background(args.n, args.rate, seed, &alphabet)?;
    if let Some(raw) = &args.inject {
        let spec = parse_injection(raw)?;
        records = inject_episode(&records, &spec, seed.wrapping_add(1))?;
    }
    fs::write(&args.output, write_trace(&records, true))
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    eprintln!(
        "wrote {} records to {}",
        records.len(),
        args.output.display()
    );
    Ok(())
}

/// Parses "start=500,gap=32" plus optional x=, y=, exe=, span= fields.
fn parse_injection(raw: &str) -> Result<InjectionSpec> {
    let mut spec = InjectionSpec::default();
    let mut saw_start = false;
    let mut saw_gap = false;
    for field in raw.split(',') {
        let (key, value) = field
            .split_once('=')
            .with_context(|| format!("--inject field {field:?} is not key=value"))?;
        match key.trim() {
            "start" => {
                spec.start_time = value.parse().context("--inject start")?;
                saw_start = true;
            }
            "gap" => {
                spec.gap = value.parse().context("--inject gap")?;
                saw_gap = true;
            }
            "x" => spec.fd_pair.0 = value.to_string(),
            "y" => spec.fd_pair.1 = value.to_string(),
            "exe" => spec.exe = value.to_string(),
            "span" => spec.max_span_records = value.parse().context("--inject span")?,
            other => bail!("--inject has no field named {other:?}"),
        }
    }
    if !(saw_start && saw_gap) {
        bail!("--inject needs at least start=<t>,gap=<t>");
    }
    Ok(spec)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let records = load_trace(&args.input)?;
    let config = args.engine.stream_config()?;
    let detector = detector_by_name(&args.engine.detector)
        .with_context(|| format!("unknown detector {:?}", args.engine.detector))?;
    let cost = cost_model_by_name(&args.engine.cost)
        .with_context(|| format!("unknown cost model {:?}", args.engine.cost))?;

    let result = run_pww(
        &records,
        &config,
        detector.as_ref(),
        cost.as_ref(),
        args.mode,
    )?;

    fs::write(&args.matches_out, matches_csv(&result.matches))
        .with_context(|| format!("cannot write {}", args.matches_out.display()))?;
    fs::write(&args.ledger_out, ledger_csv(&result.ledger))
        .with_context(|| format!("cannot write {}", args.ledger_out.display()))?;
    println!(
        "records={} levels={} windows={} matches={} rho_measured={} rho_bound={}",
        records.len(),
        result.levels_used,
        result
            .ledger
            .per_level
            .iter()
            .map(|lw| lw.windows)
            .sum::<u64>(),
        result.matches.len(),
        result.ledger.rho_measured,
        result.ledger.rho_bound,
    );
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let records = load_trace(&args.input)?;
    let detector = detector_by_name(&args.detector)
        .with_context(|| format!("unknown detector {:?}", args.detector))?;
    let cost = cost_model_by_name(&args.cost)
        .with_context(|| format!("unknown cost model {:?}", args.cost))?;
    let result = run_baseline_fixed(
        &records,
        args.window,
        args.step,
        detector.as_ref(),
        cost.as_ref(),
    )?;
    if let Some(path) = &args.matches_out {
        fs::write(path, matches_csv(&result.matches))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!(
        "records={} windows={} work={} matches={} rho_fixed={}",
        records.len(),
        result.windows,
        result.total_work,
        result.matches.len(),
        result.rho,
    );
    Ok(())
}

fn cmd_bench_delay(args: BenchDelayArgs) -> Result<()> {
    let durations = parse_u64_list(&args.durations).context("--durations")?;
    let cfg = ExperimentConfig {
        background_len: args.n,
        rate: args.rate,
        t0: args.t0,
        l_max: args.l_max,
        t_max: args.t_max,
        ..ExperimentConfig::default()
    };
    let seed = resolve_seed(args.seed)?;
    let points = run_delay_experiment(&durations, args.trials, &cfg, seed)?;
    emit(args.output.as_ref(), &delay_csv(&points))
}

fn cmd_bench_work(args: BenchWorkArgs) -> Result<()> {
    let sweep = parse_u64_list(&args.t0).context("--t0")?;
    let cfg = ExperimentConfig {
        background_len: args.n,
        rate: args.rate,
        t0: 1,
        l_max: args.l_max,
        t_max: args.t_max,
        baseline_window: args.window,
        baseline_step: args.step,
        ..ExperimentConfig::default()
    };
    let seed = resolve_seed(args.seed)?;
    let out = run_work_experiment(&sweep, &cfg, seed)?;
    for (t0, reason) in &out.skipped {
        eprintln!("skipping t0={t0}: {reason}");
    }
    emit(args.output.as_ref(), &work_csv(&out.points))
}

/// "1,2,4" as a plain list; "4..512" as the doubling range 4, 8, ..., 512.
fn parse_u64_list(raw: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = raw.split_once("..") {
        let lo: u64 = lo.parse().context("range start")?;
        let hi: u64 = hi.parse().context("range end")?;
        if lo == 0 || hi < lo {
            bail!("range {raw:?} is empty");
        }
        let mut values = Vec::new();
        let mut v = lo;
        while v <= hi {
            values.push(v);
            match v.checked_mul(2) {
                Some(next) => v = next,
                None => break,
            }
        }
        return Ok(values);
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .with_context(|| format!("value {s:?}"))
        })
        .collect()
}
