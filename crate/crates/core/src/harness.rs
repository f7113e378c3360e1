//! Measured runs, parameter sweeps, oracle checking and calibration over
//! interned streams.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::engine::{Delta, Engine, EngineMetrics, EngineOptions};
use crate::error::{Error, Result};
use crate::model::{QueryId, Record, ScoreConfig};
use crate::oracle::{diff_queries, diff_states, MismatchReport, OracleCaps, OracleState};
use crate::planner::{calibrate, CostConstants, ProbeRunStats, ThetaStrategy};
use crate::stream::theta_max;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub engine: EngineOptions,
    pub repeats: usize,
    pub warmup: bool,
}

impl RunConfig {
    pub fn new(engine: EngineOptions) -> Self {
        Self { engine, repeats: 3, warmup: true }
    }

    /// Engine options with per-item maxima filled in when the strategy
    /// needs them.
    fn options_for(&self, records: &[Record]) -> EngineOptions {
        let mut opts = self.engine.clone();
        if opts.theta.needs_theta_max() && opts.theta_max.is_none() {
            opts.theta_max = Some(theta_max(records));
        }
        opts
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self { p50: at(0.5), p90: at(0.9), p99: at(0.99), max: v[v.len() - 1] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub mode: String,
    pub theta: String,
    pub score: ScoreConfig,
    pub repeats: usize,
    /// Mean over repeats of the query registration phase.
    pub query_secs: f64,
    /// Mean over repeats of the item and event phase.
    pub stream_secs: f64,
    /// Per-repeat item and event phase times.
    pub stream_samples: Vec<f64>,
    pub metrics: EngineMetrics,
    pub refreshes_per_item: Percentiles,
    pub events_per_item: Percentiles,
}

impl RunReport {
    /// Item and event records per minute.
    pub fn throughput(&self) -> f64 {
        let n = (self.metrics.items + self.metrics.events) as f64;
        if self.stream_secs > 0.0 {
            n / self.stream_secs * 60.0
        } else {
            0.0
        }
    }

    pub fn to_kv(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("mode", &self.mode);
        kv("theta_strategy", &self.theta);
        kv("alpha", &self.score.alpha);
        kv("beta", &self.score.beta);
        kv("gamma", &self.score.gamma);
        kv("decay_horizon", &self.score.decay_horizon);
        kv("repeats", &self.repeats);
        kv("query_phase_secs", &self.query_secs);
        kv("stream_phase_secs", &self.stream_secs);
        kv("queries", &m.queries);
        kv("items", &m.items);
        kv("events", &m.events);
        kv("zero_score_events", &m.zero_events);
        kv("throughput_records_per_min", &format!("{:.1}", self.throughput()));
        kv("ih_invocations", &m.ih_invocations());
        kv("ih_item_matches", &m.item_matches);
        kv("ih_event_matches", &m.event_matches);
        kv("refreshes", &m.refreshes);
        kv("eh_probes", &m.probes);
        kv("eh_traversals", &m.traversals);
        kv("visited_fraction", &format!("{:.6}", m.visited_fraction()));
        kv("result_updates", &m.result_updates);
        kv("evictions", &m.evictions);
        kv("candidate_inserts", &m.candidate_inserts);
        kv("pruned_candidates", &m.pruned_candidates);
        kv("repositions", &m.repositions);
        for (name, p) in [("refreshes_per_item", self.refreshes_per_item), ("events_per_item", self.events_per_item)] {
            kv(&format!("{name}_p50"), &p.p50);
            kv(&format!("{name}_p90"), &p.p90);
            kv(&format!("{name}_p99"), &p.p99);
            kv(&format!("{name}_max"), &p.max);
        }
        s
    }
}

/// The index of the first record that is not a query.
fn query_prefix(records: &[Record]) -> usize {
    records.iter().position(|r| !matches!(r, Record::Query(_))).unwrap_or(records.len())
}

struct Timed {
    engine: Engine,
    query_secs: f64,
    stream_secs: f64,
}

fn timed_pass(opts: &EngineOptions, records: &[Record], mut sink: Option<&mut dyn FnMut(&[Delta])>) -> Result<Timed> {
    let split = query_prefix(records);
    let (front, rest) = records.split_at(split);
    let (front, rest) = (front.to_vec(), rest.to_vec());
    let mut engine = Engine::new(opts.clone())?;
    let started = Instant::now();
    for r in front {
        let deltas = engine.process(r)?;
        if let Some(sink) = sink.as_mut() {
            sink(deltas);
        }
    }
    let query_secs = started.elapsed().as_secs_f64();
    let started = Instant::now();
    for r in rest {
        let deltas = engine.process(r)?;
        if let Some(sink) = sink.as_mut() {
            sink(deltas);
        }
    }
    let stream_secs = started.elapsed().as_secs_f64();
    Ok(Timed { engine, query_secs, stream_secs })
}

/// Warm-up pass (optional) plus `repeats` measured passes. Leading query
/// records are timed separately from the rest.
pub fn run(config: &RunConfig, records: &[Record]) -> Result<RunReport> {
    let opts = config.options_for(records);
    if config.warmup {
        timed_pass(&opts, records, None)?;
    }
    let repeats = config.repeats.max(1);
    let mut query_secs = 0.0;
    let mut samples = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let t = timed_pass(&opts, records, None)?;
        query_secs += t.query_secs;
        samples.push(t.stream_secs);
        last = Some(t.engine);
    }
    let engine = last.expect("at least one repeat");
    let metrics = engine.metrics().clone();
    let to_f64 = |v: &[u32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
    Ok(RunReport {
        mode: opts.mode.to_string(),
        theta: opts.theta.to_string(),
        score: opts.score,
        repeats,
        query_secs: query_secs / repeats as f64,
        stream_secs: samples.iter().sum::<f64>() / repeats as f64,
        stream_samples: samples,
        refreshes_per_item: Percentiles::of(&to_f64(&metrics.item_refreshes)),
        events_per_item: Percentiles::of(&to_f64(&metrics.item_events)),
        metrics,
    })
}

/// One untimed pass that writes every result change as
/// `ts query inserted evicted` (ids dense, `-` for no eviction).
pub fn write_deltas(config: &RunConfig, records: &[Record], out: &mut dyn Write) -> Result<()> {
    let opts = config.options_for(records);
    let mut failed = None;
    let mut sink = |deltas: &[Delta]| {
        for d in deltas {
            let evicted = d.evicted.map_or("-".to_string(), |e| e.0.to_string());
            if let Err(e) = writeln!(out, "{} {} {} {}", d.ts, d.query.0, d.inserted.0, evicted) {
                failed.get_or_insert(e);
            }
        }
    };
    timed_pass(&opts, records, Some(&mut sink))?;
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    ThetaFraction,
    ThetaGlobal,
    Gamma,
    K,
    NQueries,
    DecayHorizon,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ThetaFraction => "theta_fraction",
            SweepAxis::ThetaGlobal => "theta_global",
            SweepAxis::Gamma => "gamma",
            SweepAxis::K => "k",
            SweepAxis::NQueries => "n_queries",
            SweepAxis::DecayHorizon => "decay_horizon",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use SweepAxis::*;
        [ThetaFraction, ThetaGlobal, Gamma, K, NQueries, DecayHorizon]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}")))
    }
}

/// Parses `inf` or a positive number of seconds.
pub fn parse_horizon(text: &str) -> Result<f64> {
    if text.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    match text.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        _ => Err(Error::Config(format!("decay horizon must be positive seconds or inf, got {text:?}"))),
    }
}

/// Keeps the first `n` queries; later query records are dropped.
pub fn truncate_queries(records: &[Record], n: usize) -> Vec<Record> {
    records.iter().filter(|r| !matches!(r, Record::Query(q) if q.id.index() >= n)).cloned().collect()
}

pub fn with_k(records: &[Record], k: usize) -> Vec<Record> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            if let Record::Query(q) = &mut r {
                q.k = k;
            }
            r
        })
        .collect()
}

/// Applies one sweep value to a base configuration and stream.
pub fn sweep_point(
    axis: SweepAxis,
    value: &str,
    base: &RunConfig,
    records: &[Record],
) -> Result<(RunConfig, Option<Vec<Record>>)> {
    let bad = || Error::Config(format!("bad {} value {value:?}", axis.name()));
    let mut config = base.clone();
    let mut stream = None;
    match axis {
        SweepAxis::ThetaFraction => config.engine.theta = format!("fraction:{value}").parse()?,
        SweepAxis::ThetaGlobal => config.engine.theta = format!("global:{value}").parse()?,
        SweepAxis::Gamma => {
            let gamma: f64 = value.parse().map_err(|_| bad())?;
            config.engine.score = ScoreConfig::with_gamma(gamma, base.engine.score.decay_horizon)?;
        }
        SweepAxis::DecayHorizon => {
            let s = base.engine.score;
            config.engine.score = ScoreConfig::new(s.alpha, s.beta, s.gamma, parse_horizon(value)?)?;
        }
        SweepAxis::K => {
            let k: usize = value.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            stream = Some(with_k(records, k));
        }
        SweepAxis::NQueries => stream = Some(truncate_queries(records, value.parse().map_err(|_| bad())?)),
    }
    Ok((config, stream))
}

pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[String], records: &[Record]) -> Result<Vec<(String, RunReport)>> {
    values
        .iter()
        .map(|v| {
            let (config, stream) = sweep_point(axis, v, base, records)?;
            Ok((v.clone(), run(&config, stream.as_deref().unwrap_or(records))?))
        })
        .collect()
}

/// Series file: one `[point]` block per value.
pub fn series_to_kv(axis: SweepAxis, series: &[(String, RunReport)]) -> String {
    let mut s = String::new();
    for (value, report) in series {
        let _ = writeln!(s, "[point]\naxis={}\nvalue={value}", axis.name());
        s.push_str(&report.to_kv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum CheckFailure {
    Mismatch { record: usize, report: MismatchReport },
    Invariant { record: usize, message: String },
}

impl fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckFailure::Mismatch { record, report } => write!(f, "after record {record}:\n{report}"),
            CheckFailure::Invariant { record, message } => write!(f, "after record {record}: {message}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckOptions {
    /// Compare every query (not only touched ones) this often; 0 = only at
    /// the end.
    pub full_every: usize,
    /// Run the engine's structural checks this often; 0 = never.
    pub invariants_every: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { full_every: 64, invariants_every: 0 }
    }
}

/// Runs engine and oracle in lockstep. After each record the queries the
/// oracle recomputed and those the engine changed are compared exactly.
pub fn check(opts: &EngineOptions, records: &[Record], check: CheckOptions) -> Result<Option<CheckFailure>> {
    Ok(check_all(std::slice::from_ref(opts), records, check)?.pop().flatten())
}

/// [`check`] for several configurations sharing one oracle pass. Each slot
/// holds the first failure of that configuration.
pub fn check_all(configs: &[EngineOptions], records: &[Record], check: CheckOptions) -> Result<Vec<Option<CheckFailure>>> {
    let maxima = configs.iter().any(|o| o.theta.needs_theta_max() && o.theta_max.is_none()).then(|| theta_max(records));
    let mut engines = configs
        .iter()
        .map(|o| {
            let mut opts = o.clone();
            if opts.theta.needs_theta_max() && opts.theta_max.is_none() {
                opts.theta_max = maxima.clone();
            }
            Engine::new(opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut failures: Vec<Option<CheckFailure>> = vec![None; configs.len()];
    let mut oracle = OracleState::new(configs.first().map_or_else(ScoreConfig::default, |o| o.score));
    if configs.iter().any(|o| o.score != *oracle.score()) {
        return Err(Error::Config("configurations checked together must share the score function".into()));
    }
    let mut touched: Vec<QueryId> = Vec::new();
    for (n, record) in records.iter().enumerate() {
        let recomputed = oracle.step(record)?;
        let full = (check.full_every > 0 && n % check.full_every == 0) || n + 1 == records.len();
        let structural = check.invariants_every > 0 && (n % check.invariants_every == 0 || n + 1 == records.len());
        for (engine, failure) in engines.iter_mut().zip(failures.iter_mut()) {
            if failure.is_some() {
                continue;
            }
            touched.clear();
            touched.extend_from_slice(&recomputed);
            touched.extend(engine.process(record.clone())?.iter().map(|d| d.query));
            touched.sort_unstable();
            touched.dedup();
            let report = if full {
                diff_states(engine.queries(), &oracle)
            } else {
                diff_queries(engine.queries(), &oracle, touched.iter().copied())
            };
            if !report.is_empty() {
                *failure = Some(CheckFailure::Mismatch { record: n, report });
            } else if structural {
                if let Err(message) = engine.check_invariants() {
                    *failure = Some(CheckFailure::Invariant { record: n, message });
                }
            }
        }
        if failures.iter().all(Option::is_some) {
            break;
        }
    }
    Ok(failures)
}

/// [`check`] behind the oracle size guard.
pub fn check_capped(
    opts: &EngineOptions,
    records: &[Record],
    caps: OracleCaps,
    options: CheckOptions,
) -> Result<Option<CheckFailure>> {
    let queries = records.iter().filter(|r| matches!(r, Record::Query(_))).count();
    caps.check(records.len(), queries)?;
    check(opts, records, options)
}

/// Probe runs at several global thresholds (multiples of the mean per-item
/// maximum), then a least-squares fit of the cost constants.
pub fn calibrate_stream(base: &EngineOptions, records: &[Record], multiples: &[f64]) -> Result<CostConstants> {
    let maxima = theta_max(records);
    let with_events: Vec<f64> = maxima.iter().copied().filter(|m| *m > 0.0).collect();
    if with_events.is_empty() {
        return Err(Error::CostModel("calibration stream has no events".into()));
    }
    let mean_max = with_events.iter().sum::<f64>() / with_events.len() as f64;
    let mut merged = ProbeRunStats::default();
    for &m in multiples {
        let mut opts = base.clone();
        opts.theta = ThetaStrategy::Global(m * mean_max);
        opts.record_calibration = true;
        let t = timed_pass(&opts, records, None)?;
        let stats = t.engine.calibration();
        merged.refreshes.extend(stats.refreshes);
        merged.probe_secs += stats.probe_secs;
        merged.probes += stats.probes;
        merged.item_match_secs.extend(stats.item_match_secs);
        merged.items = stats.items;
    }
    calibrate(&merged)
}
