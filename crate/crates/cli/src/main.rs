use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rtopk_core::harness::{self, CheckOptions, RunConfig, SweepAxis};
use rtopk_core::oracle::OracleCaps;
use rtopk_core::planner::optimal_theta;
use rtopk_core::stream::{self, filter_min_events, read_stream_file, stats_path, write_stream_file};
use rtopk_core::{CostConstants, EngineOptions, IndexVariant, Interner, Mode, Record, ScoreConfig, StreamStats, ThetaStrategy, WorkloadParams};

#[derive(Parser)]
#[command(name = "rtopk", version, about = "Continuous top-k pub/sub engine: runs, sweeps, checks and workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measured run of one configuration.
    Run(RunArgs),
    /// One measured run per value of a parameter.
    Sweep(SweepArgs),
    /// Engine against the oracle after every record.
    Check(CheckArgs),
    /// Synthetic Twitter-like stream.
    Generate(GenerateArgs),
    /// Keep items with a minimum number of events.
    Filter(FilterArgs),
    /// Fit the cost constants on probe runs.
    Calibrate(CalibrateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Naive,
    Rrts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "rrts")]
    mode: ModeArg,
    #[arg(long = "eh-index", default_value = "itempart")]
    eh_index: IndexVariant,
    /// zero, fraction:F, global:V or optimal:CONSTANTS_FILE
    #[arg(long = "theta-strategy", default_value = "fraction:1/2")]
    theta_strategy: String,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 0.4)]
    gamma: f64,
    /// Overrides the k of every query in the stream.
    #[arg(long)]
    k: Option<usize>,
    /// Seconds for a unit score to decay away, or inf.
    #[arg(long = "decay-horizon", default_value = "inf")]
    decay_horizon: String,
    /// Delete candidates whose qmin leaves the item's threshold window.
    #[arg(long)]
    prune: bool,
    /// Build candidate lists when items arrive rather than at their first event.
    #[arg(long = "eager-lists")]
    eager_lists: bool,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "on")]
    warmup: Switch,
    /// Report file; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    measure: MeasureArgs,
    /// Writes every result change as `ts query inserted evicted`.
    #[arg(long)]
    deltas: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    measure: MeasureArgs,
    /// theta_fraction, theta_global, gamma, k, n_queries or decay_horizon
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Check NAIVE and every RRTS variant instead of the configured one.
    #[arg(long)]
    matrix: bool,
    /// Refuse streams with more records than this.
    #[arg(long = "oracle-cap")]
    oracle_cap: Option<usize>,
    /// Compare all queries every this many records (0: only at the end).
    #[arg(long = "full-every", default_value_t = 64)]
    full_every: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Ds1,
    Ds5,
    Ds10,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 1_000)]
    queries: usize,
    #[arg(long, default_value_t = 1_000)]
    items: usize,
    #[arg(long = "events-per-item")]
    events_per_item: Option<f64>,
    #[arg(long = "min-events")]
    min_events: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long = "zipf-s")]
    zipf_s: Option<f64>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long = "min-events")]
    min_events: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Probe thresholds as multiples of the mean per-item maximum.
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.25,0.5,1,2")]
    multiples: Vec<f64>,
    /// Constants file; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl EngineArgs {
    fn options(&self) -> Result<EngineOptions> {
        let score = ScoreConfig::new(self.alpha, self.beta, self.gamma, harness::parse_horizon(&self.decay_horizon)?)?;
        let theta = match self.theta_strategy.strip_prefix("optimal:") {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading constants {path}"))?;
                ThetaStrategy::Optimal(CostConstants::from_kv(&text)?)
            }
            None => self.theta_strategy.parse()?,
        };
        let mode = match self.mode {
            ModeArg::Naive => Mode::Naive,
            ModeArg::Rrts => Mode::Rrts(self.eh_index),
        };
        let mut opts = EngineOptions::new(mode, score, theta);
        opts.prune_beyond_window = self.prune;
        opts.eager_lists = self.eager_lists;
        Ok(opts)
    }

    fn records(&self) -> Result<Vec<Record>> {
        let raw = read_stream_file(&self.input).with_context(|| format!("reading {}", self.input.display()))?;
        Ok(Interner::new(self.k).intern_all(&raw)?)
    }
}

impl MeasureArgs {
    fn config(&self, engine: EngineOptions) -> RunConfig {
        RunConfig { engine, repeats: self.repeats, warmup: matches!(self.warmup, Switch::On) }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn write_with_stats(path: &Path, records: &[rtopk_core::StreamRecord]) -> Result<StreamStats> {
    write_stream_file(path, records).with_context(|| format!("writing {}", path.display()))?;
    let stats = StreamStats::of(records);
    fs::write(stats_path(path), stats.to_kv())?;
    Ok(stats)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let records = args.engine.records()?;
    let config = args.measure.config(args.engine.options()?);
    let report = harness::run(&config, &records)?;
    emit(args.measure.report.as_deref(), &report.to_kv())?;
    if let Some(path) = &args.deltas {
        let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        harness::write_deltas(&config, &records, &mut out)?;
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let records = args.engine.records()?;
    let config = args.measure.config(args.engine.options()?);
    let series = harness::sweep(&config, args.axis, &args.values, &records)?;
    emit(args.measure.report.as_deref(), &harness::series_to_kv(args.axis, &series))?;
    Ok(ExitCode::SUCCESS)
}

fn check(args: CheckArgs) -> Result<ExitCode> {
    let records = args.engine.records()?;
    let queries = records.iter().filter(|r| matches!(r, Record::Query(_))).count();
    let mut caps = OracleCaps::default();
    if let Some(cap) = args.oracle_cap {
        caps.max_records = cap;
    }
    caps.check(records.len(), queries)?;
    let base = args.engine.options()?;
    let configs: Vec<EngineOptions> = if args.matrix {
        std::iter::once(Mode::Naive)
            .chain(IndexVariant::ALL.map(Mode::Rrts))
            .map(|mode| EngineOptions { mode, ..base.clone() })
            .collect()
    } else {
        vec![base]
    };
    let options = CheckOptions { full_every: args.full_every, invariants_every: 0 };
    let failures = harness::check_all(&configs, &records, options)?;
    let mut ok = true;
    for (c, f) in configs.iter().zip(failures) {
        match f {
            None => println!("ok {} {}", c.mode, c.theta),
            Some(f) => {
                ok = false;
                println!("FAIL {} {}: {f}", c.mode, c.theta);
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn generate(args: GenerateArgs) -> Result<ExitCode> {
    let mut params = match args.preset {
        Some(Preset::Ds1) => WorkloadParams::ds1(args.queries, args.items, args.seed),
        Some(Preset::Ds5) => WorkloadParams::ds5(args.queries, args.items, args.seed),
        Some(Preset::Ds10) => WorkloadParams::ds10(args.queries, args.items, args.seed),
        None => WorkloadParams { n_queries: args.queries, n_items: args.items, seed: args.seed, ..Default::default() },
    };
    params.k = args.k;
    if let Some(v) = args.events_per_item {
        params.events_per_item_mean = v;
    }
    if let Some(v) = args.min_events {
        params.min_events = v;
    }
    if let Some(v) = args.vocab {
        params.vocab_size = v;
    }
    if let Some(v) = args.zipf_s {
        params.term_zipf_s = v;
    }
    let records = stream::generate_workload(&params)?;
    let stats = write_with_stats(&args.output, &records)?;
    print!("{}", stats.to_kv());
    Ok(ExitCode::SUCCESS)
}

fn filter(args: FilterArgs) -> Result<ExitCode> {
    if args.input == args.output {
        bail!("input and output must differ");
    }
    let records = read_stream_file(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let kept = filter_min_events(&records, args.min_events);
    let stats = write_with_stats(&args.output, &kept)?;
    print!("{}", stats.to_kv());
    Ok(ExitCode::SUCCESS)
}

fn calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let records = args.engine.records()?;
    let constants = harness::calibrate_stream(&args.engine.options()?, &records, &args.multiples)?;
    let mut text = constants.to_kv();
    if let Ok(theta) = optimal_theta(&constants) {
        text.push_str(&format!("# optimal_theta={theta}\n"));
    }
    emit(args.report.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
        Command::Generate(a) => generate(a),
        Command::Filter(a) => filter(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
