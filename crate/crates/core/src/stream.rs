//! Stream files: one JSON record per line, string ids. Also the synthetic
//! workload generator, the event-count filter and the stats sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Zipf};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Event, Item, ItemId, Query, QueryId, Record, TermId, TermProfile, Timestamp};

#[derive(Clone, Debug, PartialEq)]
pub enum StreamRecord {
    Query { id: String, ts: Timestamp, terms: Vec<(String, f64)>, k: usize },
    Item { id: String, ts: Timestamp, terms: Vec<(String, f64)>, static_quality: f64 },
    Event { id: String, ts: Timestamp, target: String, score: f64 },
}

impl StreamRecord {
    pub fn ts(&self) -> Timestamp {
        match self {
            StreamRecord::Query { ts, .. } | StreamRecord::Item { ts, .. } | StreamRecord::Event { ts, .. } => *ts,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            StreamRecord::Query { id, .. } | StreamRecord::Item { id, .. } | StreamRecord::Event { id, .. } => id,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    t: String,
    w: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(rename = "type")]
    kind: String,
    id: String,
    ts: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terms: Option<Vec<RawTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, rename = "static", skip_serializing_if = "Option::is_none")]
    static_quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

fn check_terms(terms: Vec<RawTerm>) -> std::result::Result<Vec<(String, f64)>, String> {
    if terms.is_empty() {
        return Err("empty term list".into());
    }
    terms
        .into_iter()
        .map(|t| {
            if t.w > 0.0 && t.w.is_finite() {
                Ok((t.t, t.w))
            } else {
                Err(format!("weight {} of term {:?} must be positive", t.w, t.t))
            }
        })
        .collect()
}

fn unit_range(name: &str, v: f64) -> std::result::Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{name} {v} outside [0, 1]"))
    }
}

fn convert(raw: RawRecord) -> std::result::Result<StreamRecord, String> {
    if !(raw.ts >= 0.0 && raw.ts.is_finite()) {
        return Err(format!("invalid timestamp {}", raw.ts));
    }
    let reject = |present: bool, field: &str| {
        if present {
            Err(format!("field {field:?} not allowed on a {} record", raw.kind))
        } else {
            Ok(())
        }
    };
    match raw.kind.as_str() {
        "query" => {
            reject(raw.static_quality.is_some(), "static")?;
            reject(raw.target.is_some(), "target")?;
            reject(raw.score.is_some(), "score")?;
            let k = raw.k.ok_or("query without k")?;
            if k == 0 {
                return Err("k must be positive".into());
            }
            let terms = check_terms(raw.terms.ok_or("query without terms")?)?;
            Ok(StreamRecord::Query { id: raw.id, ts: raw.ts, terms, k })
        }
        "item" => {
            reject(raw.k.is_some(), "k")?;
            reject(raw.target.is_some(), "target")?;
            reject(raw.score.is_some(), "score")?;
            let static_quality = unit_range("static quality", raw.static_quality.ok_or("item without static")?)?;
            let terms = check_terms(raw.terms.ok_or("item without terms")?)?;
            Ok(StreamRecord::Item { id: raw.id, ts: raw.ts, terms, static_quality })
        }
        "event" => {
            reject(raw.terms.is_some(), "terms")?;
            reject(raw.k.is_some(), "k")?;
            reject(raw.static_quality.is_some(), "static")?;
            let score = unit_range("event score", raw.score.ok_or("event without score")?)?;
            let target = raw.target.ok_or("event without target")?;
            Ok(StreamRecord::Event { id: raw.id, ts: raw.ts, target, score })
        }
        other => Err(format!("unknown record type {other:?}")),
    }
}

/// Parses one line; `line` is 1-based and only used in errors.
pub fn parse_record(text: &str, line: usize) -> Result<StreamRecord> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    convert(raw).map_err(|message| Error::Parse { line, message })
}

pub fn write_record(record: &StreamRecord) -> String {
    let terms = |t: &[(String, f64)]| Some(t.iter().map(|(t, w)| RawTerm { t: t.clone(), w: *w }).collect());
    let raw = match record {
        StreamRecord::Query { id, ts, terms: t, k } => RawRecord {
            kind: "query".into(),
            id: id.clone(),
            ts: *ts,
            terms: terms(t),
            k: Some(*k),
            static_quality: None,
            target: None,
            score: None,
        },
        StreamRecord::Item { id, ts, terms: t, static_quality } => RawRecord {
            kind: "item".into(),
            id: id.clone(),
            ts: *ts,
            terms: terms(t),
            k: None,
            static_quality: Some(*static_quality),
            target: None,
            score: None,
        },
        StreamRecord::Event { id, ts, target, score } => RawRecord {
            kind: "event".into(),
            id: id.clone(),
            ts: *ts,
            terms: None,
            k: None,
            static_quality: None,
            target: Some(target.clone()),
            score: Some(*score),
        },
    };
    serde_json::to_string(&raw).expect("plain data serializes")
}

/// Reads a whole stream, rejecting timestamp regressions. Blank lines are
/// skipped.
pub fn read_stream(reader: impl BufRead) -> Result<Vec<StreamRecord>> {
    let mut out = Vec::new();
    let mut last = 0.0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line, n + 1)?;
        if record.ts() < last {
            return Err(Error::Parse { line: n + 1, message: format!("timestamp {} precedes {last}", record.ts()) });
        }
        last = record.ts();
        out.push(record);
    }
    Ok(out)
}

pub fn write_stream(mut writer: impl Write, records: &[StreamRecord]) -> Result<()> {
    for r in records {
        writeln!(writer, "{}", write_record(r))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_stream_file(path: &Path) -> Result<Vec<StreamRecord>> {
    let file = std::fs::File::open(path)?;
    read_stream(std::io::BufReader::new(file))
}

pub fn write_stream_file(path: &Path, records: &[StreamRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_stream(std::io::BufWriter::new(file), records)
}

/// Maps string ids and terms to dense ids in arrival order.
#[derive(Debug, Default, Clone)]
pub struct Interner {
    terms: FxHashMap<String, TermId>,
    queries: FxHashMap<String, QueryId>,
    items: FxHashMap<String, ItemId>,
    query_names: Vec<String>,
    item_names: Vec<String>,
    events: u64,
    /// Replaces every query's k when set.
    pub k_override: Option<usize>,
}

impl Interner {
    pub fn new(k_override: Option<usize>) -> Self {
        Self { k_override, ..Self::default() }
    }

    pub fn query_name(&self, id: QueryId) -> &str {
        &self.query_names[id.index()]
    }

    pub fn item_name(&self, id: ItemId) -> &str {
        &self.item_names[id.index()]
    }

    pub fn item_id(&self, name: &str) -> Option<ItemId> {
        self.items.get(name).copied()
    }

    fn profile(&mut self, terms: &[(String, f64)]) -> Result<TermProfile> {
        let mut entries = Vec::with_capacity(terms.len());
        for (t, w) in terms {
            let next = TermId::from_index(self.terms.len());
            let id = *self.terms.entry(t.clone()).or_insert(next);
            entries.push((id, *w));
        }
        TermProfile::new(entries)
    }

    pub fn intern(&mut self, record: &StreamRecord) -> Result<Record> {
        Ok(match record {
            StreamRecord::Query { id, ts, terms, k } => {
                if self.queries.contains_key(id) {
                    return Err(Error::Workload(format!("duplicate query id {id:?}")));
                }
                let qid = QueryId::from_index(self.query_names.len());
                let profile = self.profile(terms)?;
                self.queries.insert(id.clone(), qid);
                self.query_names.push(id.clone());
                Record::Query(Query::new(qid, profile, self.k_override.unwrap_or(*k), *ts))
            }
            StreamRecord::Item { id, ts, terms, static_quality } => {
                if self.items.contains_key(id) {
                    return Err(Error::Workload(format!("duplicate item id {id:?}")));
                }
                let iid = ItemId::from_index(self.item_names.len());
                let profile = self.profile(terms)?;
                self.items.insert(id.clone(), iid);
                self.item_names.push(id.clone());
                Record::Item(Item::new(iid, profile, *static_quality, *ts))
            }
            StreamRecord::Event { id, ts, target, score } => {
                let target =
                    *self.items.get(target).ok_or_else(|| Error::Workload(format!("event {id:?} targets unknown item {target:?}")))?;
                let eid = self.events;
                self.events += 1;
                Record::Event(Event { id: eid, target, score: *score, ts: *ts })
            }
        })
    }

    /// Interns a whole stream; errors carry the 1-based record number.
    pub fn intern_all(&mut self, records: &[StreamRecord]) -> Result<Vec<Record>> {
        records
            .iter()
            .enumerate()
            .map(|(n, r)| self.intern(r).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() }))
            .collect()
    }
}

/// Sum of event scores per item, by dense item id.
pub fn theta_max(records: &[Record]) -> Vec<f64> {
    let mut max = Vec::new();
    for r in records {
        match r {
            Record::Item(i) => {
                if max.len() <= i.id.index() {
                    max.resize(i.id.index() + 1, 0.0);
                }
            }
            Record::Event(e) => max[e.target.index()] += e.score,
            Record::Query(_) => {}
        }
    }
    max
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamStats {
    pub queries: usize,
    pub items: usize,
    pub events: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub avg_events: f64,
    pub avg_query_len: f64,
    pub span: f64,
}

impl StreamStats {
    pub fn of(records: &[StreamRecord]) -> Self {
        let mut counts: FxHashMap<&str, usize> = FxHashMap::default();
        let mut stats = StreamStats::default();
        let mut query_terms = 0;
        for r in records {
            match r {
                StreamRecord::Query { terms, .. } => {
                    stats.queries += 1;
                    query_terms += terms.len();
                }
                StreamRecord::Item { id, .. } => {
                    stats.items += 1;
                    counts.insert(id, 0);
                }
                StreamRecord::Event { target, .. } => {
                    stats.events += 1;
                    *counts.entry(target).or_insert(0) += 1;
                }
            }
        }
        stats.min_events = counts.values().copied().min().unwrap_or(0);
        stats.max_events = counts.values().copied().max().unwrap_or(0);
        if stats.items > 0 {
            stats.avg_events = stats.events as f64 / stats.items as f64;
        }
        if stats.queries > 0 {
            stats.avg_query_len = query_terms as f64 / stats.queries as f64;
        }
        if let (Some(first), Some(last)) = (records.first(), records.last()) {
            stats.span = last.ts() - first.ts();
        }
        stats
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries={}", self.queries);
        let _ = writeln!(s, "items={}", self.items);
        let _ = writeln!(s, "events={}", self.events);
        let _ = writeln!(s, "min_events_per_item={}", self.min_events);
        let _ = writeln!(s, "max_events_per_item={}", self.max_events);
        let _ = writeln!(s, "avg_events_per_item={:.4}", self.avg_events);
        let _ = writeln!(s, "avg_query_terms={:.4}", self.avg_query_len);
        let _ = writeln!(s, "span={}", self.span);
        s
    }
}

pub fn stats_path(stream: &Path) -> PathBuf {
    let mut name = stream.as_os_str().to_owned();
    name.push(".stats");
    PathBuf::from(name)
}

/// Keeps items with at least `min_events` events, their events, and all
/// queries, in the original order.
pub fn filter_min_events(records: &[StreamRecord], min_events: usize) -> Vec<StreamRecord> {
    let mut counts: FxHashMap<&str, usize> = FxHashMap::default();
    for r in records {
        if let StreamRecord::Event { target, .. } = r {
            *counts.entry(target).or_insert(0) += 1;
        }
    }
    let keep = |id: &str| counts.get(id).copied().unwrap_or(0) >= min_events;
    records
        .iter()
        .filter(|r| match r {
            StreamRecord::Query { .. } => true,
            StreamRecord::Item { id, .. } => keep(id),
            StreamRecord::Event { target, .. } => keep(target),
        })
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadParams {
    pub n_queries: usize,
    pub n_items: usize,
    pub events_per_item_mean: f64,
    /// Every item gets at least this many events.
    pub min_events: usize,
    pub vocab_size: usize,
    pub term_zipf_s: f64,
    pub terms_per_item: usize,
    /// Probability of 1-, 2- and 3-term queries.
    pub query_ngram_dist: [f64; 3],
    /// Queries draw from this many most frequent n-grams of each length.
    pub ngram_pool: usize,
    pub k: usize,
    /// Gap between consecutive items.
    pub item_interval: f64,
    /// Mean delay of an event after its item.
    pub event_delay_mean: f64,
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            n_queries: 1_000,
            n_items: 1_000,
            events_per_item_mean: 10.0,
            min_events: 0,
            vocab_size: 20_000,
            term_zipf_s: 1.0,
            terms_per_item: 8,
            query_ngram_dist: [0.6, 0.3, 0.1],
            ngram_pool: 2_000,
            k: 1,
            item_interval: 1.0,
            event_delay_mean: 50.0,
            seed: 1,
        }
    }
}

impl WorkloadParams {
    /// Roughly 1.3 events per item, every item with at least one.
    pub fn ds1(n_queries: usize, n_items: usize, seed: u64) -> Self {
        Self { n_queries, n_items, events_per_item_mean: 1.3, min_events: 1, seed, ..Self::default() }
    }

    /// Roughly 10 events per item, at least 5.
    pub fn ds5(n_queries: usize, n_items: usize, seed: u64) -> Self {
        Self { n_queries, n_items, events_per_item_mean: 10.0, min_events: 5, seed, ..Self::default() }
    }

    /// Roughly 20 events per item, at least 10.
    pub fn ds10(n_queries: usize, n_items: usize, seed: u64) -> Self {
        Self { n_queries, n_items, events_per_item_mean: 20.0, min_events: 10, seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Workload(m));
        if self.vocab_size == 0 || self.terms_per_item == 0 {
            return fail("vocabulary and item length must be positive".into());
        }
        if self.n_queries > 0 && self.n_items == 0 {
            return fail("queries are drawn from item n-grams; need at least one item".into());
        }
        let longest = self.query_ngram_dist.iter().rposition(|p| *p > 0.0).map_or(0, |i| i + 1);
        if longest == 0 || self.query_ngram_dist.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return fail(format!("bad n-gram mixture {:?}", self.query_ngram_dist));
        }
        if longest > self.terms_per_item {
            return fail(format!("{longest}-term queries need items of at least {longest} terms"));
        }
        if longest > self.vocab_size {
            return fail(format!("{longest}-term queries need at least {longest} vocabulary terms"));
        }
        if self.events_per_item_mean < self.min_events as f64 {
            return fail(format!("mean {} below minimum {}", self.events_per_item_mean, self.min_events));
        }
        if self.k == 0 || self.ngram_pool == 0 || self.term_zipf_s <= 0.0 {
            return fail("k, n-gram pool and Zipf exponent must be positive".into());
        }
        if !(self.item_interval > 0.0) || !(self.event_delay_mean > 0.0) {
            return fail("time scales must be positive".into());
        }
        Ok(())
    }
}

fn term_name(t: usize) -> String {
    format!("t{t}")
}

/// Top `pool` n-grams of each length over the item token sequences, by
/// count then lexicographically.
fn ngram_pools(docs: &[Vec<usize>], pool: usize) -> [Vec<Vec<usize>>; 3] {
    std::array::from_fn(|n| {
        let n = n + 1;
        let mut counts: FxHashMap<&[usize], usize> = FxHashMap::default();
        for doc in docs {
            for gram in doc.windows(n) {
                // repeated terms would collapse into a shorter query
                if n > 1 && gram.iter().collect::<FxHashSet<_>>().len() < n {
                    continue;
                }
                *counts.entry(gram).or_insert(0) += 1;
            }
        }
        let mut grams: Vec<(&[usize], usize)> = counts.into_iter().collect();
        grams.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        grams.truncate(pool);
        grams.into_iter().map(|(g, _)| g.to_vec()).collect()
    })
}

/// Synthetic stream: queries at time 0, items every `item_interval`, each
/// item's events spread after it. Deterministic for a given seed.
pub fn generate_workload(params: &WorkloadParams) -> Result<Vec<StreamRecord>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let zipf = Zipf::new(params.vocab_size as f64, params.term_zipf_s).map_err(|e| Error::Workload(e.to_string()))?;
    let docs: Vec<Vec<usize>> = (0..params.n_items)
        .map(|_| (0..params.terms_per_item).map(|_| zipf.sample(&mut rng) as usize - 1).collect())
        .collect();

    let pools = ngram_pools(&docs, params.ngram_pool);
    let mixture: Vec<f64> =
        (0..3).map(|n| if pools[n].is_empty() { 0.0 } else { params.query_ngram_dist[n] }).collect();
    let total: f64 = mixture.iter().sum();
    let mut records = Vec::with_capacity(params.n_queries + params.n_items * (1 + params.events_per_item_mean as usize));
    for q in 0..params.n_queries {
        let mut u = rng.random::<f64>() * total;
        let n = mixture.iter().position(|p| {
            u -= p;
            u < 0.0
        });
        let n = n.unwrap_or_else(|| mixture.iter().rposition(|p| *p > 0.0).expect("validated mixture"));
        let pool = &pools[n];
        let gram = &pool[rng.random_range(0..pool.len())];
        records.push(StreamRecord::Query {
            id: format!("q{q}"),
            ts: 0.0,
            terms: gram.iter().map(|&t| (term_name(t), 1.0)).collect(),
            k: params.k,
        });
    }

    let extra_mean = params.events_per_item_mean - params.min_events as f64;
    let sigma = 1.0;
    let extra = (extra_mean > 0.0)
        .then(|| LogNormal::new(extra_mean.ln() - sigma * sigma / 2.0, sigma).map_err(|e| Error::Workload(e.to_string())))
        .transpose()?;
    let delay = Exp::new(1.0 / params.event_delay_mean).map_err(|e| Error::Workload(e.to_string()))?;
    let mut timed: Vec<(f64, u8, usize, StreamRecord)> = Vec::new();
    let mut event_no = 0usize;
    for (j, doc) in docs.iter().enumerate() {
        let ts = (j + 1) as f64 * params.item_interval;
        let mut seen = FxHashSet::default();
        let terms: Vec<(String, f64)> =
            doc.iter().filter(|t| seen.insert(**t)).map(|&t| (term_name(t), 1.0)).collect();
        let item_id = format!("i{j}");
        timed.push((
            ts,
            0,
            timed.len(),
            StreamRecord::Item { id: item_id.clone(), ts, terms, static_quality: rng.random::<f64>() },
        ));
        // unbiased rounding keeps small means (about 0.3 extra events) intact
        let x = extra.map_or(0.0, |d| d.sample(&mut rng));
        let n_events = params.min_events + x.floor() as usize + usize::from(rng.random::<f64>() < x.fract());
        for _ in 0..n_events {
            let ets = ts + delay.sample(&mut rng);
            timed.push((
                ets,
                1,
                timed.len(),
                StreamRecord::Event { id: format!("e{event_no}"), ts: ets, target: item_id.clone(), score: 1.0 },
            ));
            event_no += 1;
        }
    }
    timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    records.extend(timed.into_iter().map(|(_, _, _, r)| r));
    Ok(records)
}

/// Upper limits for [`fuzz_stream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FuzzSizes {
    pub queries: usize,
    pub items: usize,
    pub events: usize,
}

/// Small adversarial stream: tiny vocabulary, coarse static qualities and
/// timestamps (many exact score ties), fractional and zero event scores,
/// queries interleaved with items and events.
pub fn fuzz_stream(seed: u64, sizes: FuzzSizes) -> Vec<StreamRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_queries = rng.random_range(1..=sizes.queries.max(1));
    let n_items = rng.random_range(1..=sizes.items.max(1));
    let n_events = rng.random_range(0..=sizes.events);
    let vocab = rng.random_range(2..=12usize);
    fuzz_records(&mut rng, FuzzSizes { queries: n_queries, items: n_items, events: n_events }, vocab)
}

/// [`fuzz_stream`] at exactly the given sizes (events that would precede
/// every item are still dropped), over a somewhat larger vocabulary.
pub fn fuzz_stream_exact(seed: u64, sizes: FuzzSizes) -> Vec<StreamRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.random_range(8..=40usize);
    fuzz_records(&mut rng, sizes, vocab)
}

fn fuzz_records(rng: &mut ChaCha8Rng, sizes: FuzzSizes, vocab: usize) -> Vec<StreamRecord> {
    let FuzzSizes { queries: n_queries, items: n_items, events: n_events } = sizes;
    let max_k = rng.random_range(1..=5usize);
    let front_loaded = rng.random_bool(0.5);

    let mut kinds: Vec<u8> = Vec::with_capacity(n_queries + n_items + n_events);
    kinds.extend(std::iter::repeat_n(0, n_queries));
    kinds.extend(std::iter::repeat_n(1, n_items));
    kinds.extend(std::iter::repeat_n(2, n_events));
    let start = if front_loaded { n_queries } else { 0 };
    for i in (start + 1..kinds.len()).rev() {
        let j = rng.random_range(start..=i);
        kinds.swap(i, j);
    }

    let terms = |rng: &mut ChaCha8Rng| -> Vec<(String, f64)> {
        let n = rng.random_range(1..=3usize);
        let mut picked: BTreeMap<usize, f64> = BTreeMap::new();
        for _ in 0..n {
            let w = [1.0, 1.0, 2.0, 0.5][rng.random_range(0..4)];
            picked.insert(rng.random_range(0..vocab), w);
        }
        picked.into_iter().map(|(t, w)| (term_name(t), w)).collect()
    };
    let mut out = Vec::with_capacity(kinds.len());
    let (mut ts, mut q, mut items, mut e) = (0.0, 0usize, 0usize, 0usize);
    for kind in kinds {
        if rng.random_bool(0.6) {
            ts += f64::from(rng.random_range(1..=4u32)) * 0.25;
        }
        match kind {
            0 => {
                out.push(StreamRecord::Query { id: format!("q{q}"), ts, terms: terms(rng), k: rng.random_range(1..=max_k) });
                q += 1;
            }
            1 => {
                let static_quality = [0.0, 0.5, 1.0, 0.25][rng.random_range(0..4)];
                out.push(StreamRecord::Item { id: format!("i{items}"), ts, terms: terms(rng), static_quality });
                items += 1;
            }
            _ => {
                // events before the first item are dropped
                if items == 0 {
                    continue;
                }
                // skew targets towards a few hot items
                let target = if rng.random_bool(0.5) { rng.random_range(0..items.min(3)) } else { rng.random_range(0..items) };
                let score = [1.0, 1.0, 0.5, 0.25, 0.0][rng.random_range(0..5)];
                out.push(StreamRecord::Event { id: format!("e{e}"), ts, target: format!("i{target}"), score });
                e += 1;
            }
        }
    }
    out
}
