//! The matching engine: query registration, item matching and event
//! matching, with result maintenance and candidate bookkeeping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rustc_hash::FxHashMap;

use crate::candidate::{CandidateEntry, CandidateList, IndexVariant, ProbeContext};
use crate::error::{Error, Result};
use crate::index::{ItemIndex, ItemMatch, QueryIndex};
use crate::model::{aggregate_event, Event, Item, ItemId, Query, QueryId, Record, ResultEntry, ScoreConfig, Threshold, Timestamp};
use crate::planner::{theta_for_item, ProbeRunStats, RefreshSample, ThetaStrategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Every event re-matches its item against all queries.
    Naive,
    /// Events are matched against cached candidate lists.
    Rrts(IndexVariant),
}

impl Mode {
    pub fn variant(self) -> Option<IndexVariant> {
        match self {
            Mode::Naive => None,
            Mode::Rrts(v) => Some(v),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Naive => f.write_str("naive"),
            Mode::Rrts(v) => write!(f, "rrts-{v}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    /// `naive`, `rrts` (item partitioning) or `rrts-<variant>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Mode::Naive),
            "rrts" => Ok(Mode::Rrts(IndexVariant::ItemPart)),
            _ => match s.strip_prefix("rrts-") {
                Some(v) => Ok(Mode::Rrts(v.parse()?)),
                None => Err(Error::Config(format!("unknown mode {s:?}"))),
            },
        }
    }
}

/// How the refresh counter advances when the window is exceeded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RefreshRule {
    /// Smallest counter whose window strictly covers the aggregate.
    #[default]
    Absolute,
    /// `refresh += floor(dyn / theta) + 1`.
    Cumulative,
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    pub mode: Mode,
    pub score: ScoreConfig,
    pub theta: ThetaStrategy,
    /// Per-item maximal dynamic score, by dense item id.
    pub theta_max: Option<Vec<f64>>,
    pub refresh_rule: RefreshRule,
    /// Drop candidates whose qmin leaves the item's window.
    pub prune_beyond_window: bool,
    /// Upper-bound skip in the item handler.
    pub ih_prune: bool,
    /// Build an item's candidate list on arrival, from the same item handler
    /// call that finds its first results, instead of at its first event.
    pub eager_lists: bool,
    /// Collect timings for cost-model calibration.
    pub record_calibration: bool,
    /// Halves the dynamic mass handed to candidate traversals. Only for
    /// showing that the oracle check catches a broken stopping condition.
    #[doc(hidden)]
    pub fault_early_stop: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Rrts(IndexVariant::ItemPart),
            score: ScoreConfig::default(),
            theta: ThetaStrategy::Zero,
            theta_max: None,
            refresh_rule: RefreshRule::Absolute,
            prune_beyond_window: false,
            ih_prune: true,
            eager_lists: false,
            record_calibration: false,
            fault_early_stop: false,
        }
    }
}

impl EngineOptions {
    pub fn new(mode: Mode, score: ScoreConfig, theta: ThetaStrategy) -> Self {
        Self { mode, score, theta, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delta {
    pub query: QueryId,
    pub inserted: ItemId,
    pub evicted: Option<ItemId>,
    pub ts: Timestamp,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EngineMetrics {
    pub queries: u64,
    pub items: u64,
    pub events: u64,
    pub zero_events: u64,
    /// Item handler calls for new items.
    pub item_matches: u64,
    /// Item handler calls for events (naive mode).
    pub event_matches: u64,
    pub refreshes: u64,
    pub probes: u64,
    pub traversals: u64,
    pub candidates_sized: u64,
    pub visited_fraction_sum: f64,
    pub result_updates: u64,
    pub evictions: u64,
    pub candidate_inserts: u64,
    pub pruned_candidates: u64,
    /// Candidate entries moved after a qmin change.
    pub repositions: u64,
    /// Per dense item id.
    pub item_events: Vec<u32>,
    pub item_refreshes: Vec<u32>,
}

impl EngineMetrics {
    pub fn ih_invocations(&self) -> u64 {
        self.item_matches + self.event_matches + self.refreshes
    }

    /// Mean over list traversals of the share of candidates probed.
    pub fn visited_fraction(&self) -> f64 {
        if self.traversals == 0 {
            0.0
        } else {
            self.visited_fraction_sum / self.traversals as f64
        }
    }

    pub fn records(&self) -> u64 {
        self.queries + self.items + self.events
    }
}

pub struct Engine {
    opts: EngineOptions,
    queries: Vec<Query>,
    items: Vec<Item>,
    qi: QueryIndex,
    ii: ItemIndex,
    lists: Vec<Option<CandidateList>>,
    /// Query -> items listing it as a candidate, with the item's landmark
    /// score for that query at zero feedback.
    reverse: Vec<FxHashMap<ItemId, f64>>,
    metrics: EngineMetrics,
    calibration: ProbeRunStats,
    last_ts: Timestamp,
    deltas: Vec<Delta>,
    matches: Vec<ItemMatch>,
    updates: Vec<(QueryId, f64)>,
    scratch: Vec<QueryId>,
}

/// Probes candidates of one item against live query state.
struct Probe<'a> {
    queries: &'a [Query],
    items: &'a [Item],
    item: &'a Item,
    cfg: &'a ScoreConfig,
}

impl ProbeContext for Probe<'_> {
    fn probe(&mut self, query: QueryId, base: f64) -> bool {
        let score = self.cfg.landmark_total(base, self.item.dyn_score, self.item.ts);
        self.queries[query.index()].admits(&self.item.key(score))
    }

    fn diff(&self, query: QueryId, base: f64) -> f64 {
        self.queries[query.index()].qmin() - self.cfg.landmark_total(base, 0.0, self.item.ts)
    }

    fn item_dyn(&self, item: ItemId) -> f64 {
        self.items[item.index()].dyn_score
    }
}

impl Engine {
    pub fn new(opts: EngineOptions) -> Result<Self> {
        if opts.mode != Mode::Naive && opts.theta.needs_theta_max() && opts.theta_max.is_none() {
            return Err(Error::Config("fraction thresholds need per-item maximal scores".into()));
        }
        Ok(Self {
            qi: QueryIndex::new(opts.ih_prune),
            opts,
            queries: Vec::new(),
            items: Vec::new(),
            ii: ItemIndex::default(),
            lists: Vec::new(),
            reverse: Vec::new(),
            metrics: EngineMetrics::default(),
            calibration: ProbeRunStats::default(),
            last_ts: 0.0,
            deltas: Vec::new(),
            matches: Vec::new(),
            updates: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn metrics(&self) -> &EngineMetrics {
        &self.metrics
    }

    pub fn query_index(&self) -> &QueryIndex {
        &self.qi
    }

    pub fn candidate_list(&self, item: ItemId) -> Option<&CandidateList> {
        self.lists.get(item.index()).and_then(Option::as_ref)
    }

    /// Items where `query` is a candidate.
    pub fn candidate_items(&self, query: QueryId) -> impl Iterator<Item = ItemId> + '_ {
        self.reverse.get(query.index()).into_iter().flat_map(|m| m.keys()).copied()
    }

    /// Result changes of the last processed record.
    pub fn deltas(&self) -> &[Delta] {
        &self.deltas
    }

    /// Calibration samples, completed with per-item totals.
    pub fn calibration(&self) -> ProbeRunStats {
        let mut stats = self.calibration.clone();
        stats.items = self
            .items
            .iter()
            .zip(&self.metrics.item_events)
            .map(|(item, &n)| (item.dyn_score, u64::from(n)))
            .collect();
        stats
    }

    pub fn process(&mut self, record: Record) -> Result<&[Delta]> {
        self.deltas.clear();
        let ts = record.ts();
        if !(ts >= self.last_ts) {
            return Err(Error::TimestampRegression { previous: self.last_ts, got: ts });
        }
        self.last_ts = ts;
        match record {
            Record::Query(q) => self.process_query(q)?,
            Record::Item(i) => self.process_item(i)?,
            Record::Event(e) => self.process_event(&e)?,
        }
        Ok(&self.deltas)
    }

    fn process_query(&mut self, mut query: Query) -> Result<()> {
        query.result.clear();
        self.qi.add_query(&query)?;
        let qid = query.id;
        self.queries.push(query);
        self.reverse.push(FxHashMap::default());
        self.metrics.queries += 1;

        let mut relevant = Vec::new();
        let result = self.ii.match_query(&self.queries[qid.index()], &self.items, &self.opts.score, &mut relevant);
        for entry in &result {
            self.items[entry.item.index()].active.insert(qid);
            self.deltas.push(Delta { query: qid, inserted: entry.item, evicted: None, ts: self.last_ts });
        }
        self.metrics.result_updates += result.len() as u64;
        self.queries[qid.index()].result = result;
        let qmin = self.queries[qid.index()].qmin();
        self.qi.update_qmin(qid, qmin)?;

        // Items with a live candidate list must see the new query if it
        // falls inside their window.
        if self.opts.mode == Mode::Naive || !self.queries[qid.index()].is_full() {
            return Ok(());
        }
        for (item, text) in relevant {
            let it = &self.items[item.index()];
            if it.refresh == 0 || it.theta.is_zero() || it.active.contains(&qid) {
                continue;
            }
            let base = self.opts.score.static_part(text, it.static_quality);
            self.offer_candidate(qid, item, base)?;
        }
        Ok(())
    }

    fn process_item(&mut self, mut item: Item) -> Result<()> {
        item.dyn_score = 0.0;
        item.refresh = 0;
        item.active.clear();
        self.ii.add_item(&item)?;
        item.theta = match self.opts.mode {
            Mode::Naive => Threshold::ZERO,
            Mode::Rrts(_) => theta_for_item(item.id, &self.opts.theta, self.opts.theta_max.as_deref())?,
        };
        let id = item.id;
        self.items.push(item);
        self.lists.push(None);
        self.metrics.items += 1;
        self.metrics.item_events.push(0);
        self.metrics.item_refreshes.push(0);

        self.metrics.item_matches += 1;
        let eager = match self.opts.mode {
            Mode::Rrts(variant) if self.opts.eager_lists && !self.items[id.index()].theta.is_zero() => Some(variant),
            _ => None,
        };
        let reach = match eager {
            Some(_) => {
                let item = &mut self.items[id.index()];
                item.refresh = 1;
                item.theta.window(1)
            }
            None => 0.0,
        };
        let started = self.opts.record_calibration.then(Instant::now);
        let mut matches = std::mem::take(&mut self.matches);
        self.qi.match_item(&self.items[id.index()], reach, &self.opts.score, &self.queries, &mut matches);
        if let Some(started) = started {
            self.calibration.item_match_secs.push(started.elapsed().as_secs_f64());
        }
        let cfg = self.opts.score;
        let item = &self.items[id.index()];
        self.updates.clear();
        let mut candidates = Vec::new();
        for m in &matches {
            let base = cfg.static_part(m.text, item.static_quality);
            if eager.is_none() || self.queries[m.query.index()].admits(&item.key(cfg.landmark_total(base, 0.0, item.ts))) {
                self.updates.push((m.query, base));
            } else {
                candidates.push((m.query, base));
            }
        }
        self.matches = matches;
        self.apply_updates(id)?;
        if let Some(variant) = eager {
            let ts = self.items[id.index()].ts;
            let entries: Vec<CandidateEntry> = candidates.iter().map(|&(q, base)| self.entry_for(q, ts, base)).collect();
            for e in &entries {
                self.reverse[e.query.index()].insert(id, cfg.landmark_total(e.base, 0.0, ts));
            }
            self.lists[id.index()] = Some(CandidateList::build(variant, cfg.gamma, entries)?);
        }
        Ok(())
    }

    fn process_event(&mut self, event: &Event) -> Result<()> {
        let i = event.target;
        let item = self.items.get_mut(i.index()).ok_or(Error::UnknownItem(i))?;
        if !(0.0..=1.0).contains(&event.score) {
            return Err(Error::InvalidEventScore(event.score));
        }
        self.metrics.events += 1;
        if event.score == 0.0 {
            self.metrics.zero_events += 1;
            return Ok(());
        }
        aggregate_event(item, event)?;
        self.ii.update_item(i)?;
        self.metrics.item_events[i.index()] += 1;

        self.rescore_active(i)?;

        match self.opts.mode {
            Mode::Naive => {
                self.metrics.event_matches += 1;
                let mut matches = std::mem::take(&mut self.matches);
                let item = &self.items[i.index()];
                self.qi.match_item(item, item.dyn_score, &self.opts.score, &self.queries, &mut matches);
                self.updates.clear();
                self.updates.extend(
                    matches
                        .iter()
                        .filter(|m| !item.active.contains(&m.query))
                        .map(|m| (m.query, self.opts.score.static_part(m.text, item.static_quality))),
                );
                self.matches = matches;
            }
            Mode::Rrts(variant) => {
                let item = &self.items[i.index()];
                if item.theta.is_zero() || item.dyn_score > item.theta.window(item.refresh) {
                    self.refresh_candidates(i, variant)?;
                }
                let started = self.opts.record_calibration.then(Instant::now);
                let mut updates = std::mem::take(&mut self.updates);
                let list = self.lists[i.index()].as_mut().expect("refreshed above");
                let item = &self.items[i.index()];
                let mut probe = Probe { queries: &self.queries, items: &self.items, item, cfg: &self.opts.score };
                let before = list.counters;
                let mut mass = self.opts.score.gamma * item.dyn_score;
                if self.opts.fault_early_stop {
                    mass *= 0.5;
                }
                let probes = list.match_event(mass, &mut probe, &mut updates);
                let after = list.counters;
                if let Some(started) = started {
                    self.calibration.probe_secs += started.elapsed().as_secs_f64();
                    self.calibration.probes += probes;
                }
                self.metrics.probes += probes;
                self.metrics.traversals += after.traversals - before.traversals;
                self.metrics.candidates_sized += after.sized - before.sized;
                self.metrics.visited_fraction_sum += after.fraction_sum - before.fraction_sum;
                self.updates = updates;
            }
        }
        self.apply_updates(i)
    }

    /// Applies `self.updates` (queries `item` now enters), in query order.
    fn apply_updates(&mut self, item: ItemId) -> Result<()> {
        let mut updates = std::mem::take(&mut self.updates);
        updates.sort_unstable_by_key(|(q, _)| *q);
        let result = updates.iter().try_for_each(|&(q, base)| self.add_result(q, item, base));
        self.updates = updates;
        result
    }

    /// Re-scores `item` in every result publishing it.
    fn rescore_active(&mut self, item: ItemId) -> Result<()> {
        let mut active = std::mem::take(&mut self.scratch);
        active.clear();
        let it = &self.items[item.index()];
        active.extend(it.active.iter().copied());
        let (dyn_score, ts) = (it.dyn_score, it.ts);
        for &q in &active {
            let query = &mut self.queries[q.index()];
            let old_kth = query.kth().map(|e| e.item);
            let old_qmin = query.qmin();
            let mut pos = query.position_of(item).expect("active query publishes the item");
            let entry = &mut query.result[pos];
            entry.score = self.opts.score.landmark_total(entry.base, dyn_score, ts);
            while pos > 0 && query.result[pos].key().outranks(&query.result[pos - 1].key()) {
                query.result.swap(pos, pos - 1);
                pos -= 1;
            }
            if query.qmin() != old_qmin || query.kth().map(|e| e.item) != old_kth {
                self.propagate(q, old_kth)?;
            }
        }
        self.scratch = active;
        Ok(())
    }

    fn refresh_candidates(&mut self, i: ItemId, variant: IndexVariant) -> Result<()> {
        let started = self.opts.record_calibration.then(Instant::now);
        let cfg = self.opts.score;
        let item = &mut self.items[i.index()];
        let target = if item.theta.is_zero() {
            item.refresh += 1;
            item.dyn_score
        } else {
            item.refresh = match self.opts.refresh_rule {
                RefreshRule::Absolute => item.theta.covering_refresh(item.dyn_score),
                RefreshRule::Cumulative => item.refresh + (item.dyn_score / item.theta.value()).floor() as u64 + 1,
            };
            item.theta.window(item.refresh)
        };
        self.metrics.refreshes += 1;
        self.metrics.item_refreshes[i.index()] += 1;

        if let Some(old) = self.lists[i.index()].take() {
            for q in old.queries() {
                self.reverse[q.index()].remove(&i);
            }
        }
        let mut matches = std::mem::take(&mut self.matches);
        let item = &self.items[i.index()];
        self.qi.match_item(item, target, &cfg, &self.queries, &mut matches);
        let entries: Vec<CandidateEntry> = matches
            .iter()
            .filter(|m| !item.active.contains(&m.query))
            .map(|m| {
                let base = cfg.static_part(m.text, item.static_quality);
                self.entry_for(m.query, item.ts, base)
            })
            .collect();
        self.matches = matches;
        let item_ts = self.items[i.index()].ts;
        for e in &entries {
            self.reverse[e.query.index()].insert(i, cfg.landmark_total(e.base, 0.0, item_ts));
        }
        let size = entries.len();
        let mut list = CandidateList::build(variant, cfg.gamma, entries)?;
        if let Some(old) = &self.lists[i.index()] {
            list.counters = old.counters;
        }
        self.lists[i.index()] = Some(list);
        if let Some(started) = started {
            let theta = self.items[i.index()].theta.value();
            self.calibration.refreshes.push(RefreshSample { theta, size, secs: started.elapsed().as_secs_f64() });
        }
        Ok(())
    }

    /// Candidate entry of `query` for an item with the given static part.
    fn entry_for(&self, query: QueryId, item_ts: Timestamp, base: f64) -> CandidateEntry {
        let q = &self.queries[query.index()];
        let kth = q.kth().map(|e| e.item);
        CandidateEntry {
            query,
            diff: q.qmin() - self.opts.score.landmark_total(base, 0.0, item_ts),
            kth,
            kth_dyn: kth.map_or(0.0, |k| self.items[k.index()].dyn_score),
            base,
        }
    }

    /// Inserts `query` as a candidate of `item` if the item, at the top of its
    /// current window, would enter the query's result.
    fn offer_candidate(&mut self, query: QueryId, item: ItemId, base: f64) -> Result<()> {
        let it = &self.items[item.index()];
        let cfg = &self.opts.score;
        let score = cfg.landmark_total(base, it.theta.window(it.refresh), it.ts);
        if !self.queries[query.index()].admits(&it.key(score)) {
            return Ok(());
        }
        let floor = cfg.landmark_total(base, 0.0, it.ts);
        let entry = self.entry_for(query, it.ts, base);
        let list = self.lists[item.index()].as_mut().expect("caller checked the list exists");
        list.insert(entry)?;
        self.reverse[query.index()].insert(item, floor);
        self.metrics.candidate_inserts += 1;
        Ok(())
    }

    fn add_result(&mut self, q: QueryId, i: ItemId, base: f64) -> Result<()> {
        let item = &mut self.items[i.index()];
        let entry = ResultEntry {
            item: i,
            score: self.opts.score.landmark_total(base, item.dyn_score, item.ts),
            ts: item.ts,
            base,
        };
        item.active.insert(q);
        let query = &mut self.queries[q.index()];
        let old_kth = query.kth().map(|e| e.item);
        let key = entry.key();
        let at = query.result.partition_point(|e| e.key().outranks(&key));
        query.result.insert(at, entry);
        let evicted = if query.result.len() > query.k { query.result.pop() } else { None };
        self.metrics.result_updates += 1;

        if let Some(list) = self.lists[i.index()].as_mut() {
            if list.remove(q).is_some() {
                self.reverse[q.index()].remove(&i);
            }
        }
        if let Some(out) = evicted {
            self.metrics.evictions += 1;
            let gone = &mut self.items[out.item.index()];
            gone.active.remove(&q);
            if self.opts.mode != Mode::Naive && !gone.theta.is_zero() && self.lists[out.item.index()].is_some() {
                self.offer_candidate(q, out.item, out.base)?;
            }
        }
        self.propagate(q, old_kth)?;
        self.deltas.push(Delta { query: q, inserted: i, evicted: evicted.map(|e| e.item), ts: self.last_ts });
        Ok(())
    }

    /// Pushes a qmin (and possibly k-th item) change of `q` to the item
    /// handler snapshot and to the candidate lists holding `q`.
    fn propagate(&mut self, q: QueryId, old_kth: Option<ItemId>) -> Result<()> {
        let query = &self.queries[q.index()];
        let qmin = query.qmin();
        let kth = query.kth().map(|e| e.item);
        self.qi.update_qmin(q, qmin)?;
        let Some(variant) = self.opts.mode.variant() else { return Ok(()) };
        let reposition = match variant {
            IndexVariant::Exhaustive => true,
            IndexVariant::ItemPart => kth != old_kth,
            _ => false,
        };
        if !reposition && !self.opts.prune_beyond_window {
            return Ok(());
        }
        let kth_dyn = kth.map_or(0.0, |k| self.items[k.index()].dyn_score);
        let mut dropped = Vec::new();
        let mut repositions = 0;
        for (&j, &floor) in &self.reverse[q.index()] {
            let list = self.lists[j.index()].as_mut().expect("reverse index mirrors lists");
            if self.opts.prune_beyond_window {
                let item = &self.items[j.index()];
                let base = list.base_of(q).expect("reverse index mirrors lists");
                let top = self.opts.score.landmark_total(base, item.theta.window(item.refresh), item.ts);
                if !query.admits(&item.key(top)) {
                    list.remove(q);
                    dropped.push(j);
                    continue;
                }
            }
            if reposition {
                list.on_qmin_change(q, qmin - floor, kth, kth_dyn);
                repositions += 1;
            }
        }
        self.metrics.repositions += repositions;
        for j in dropped {
            self.reverse[q.index()].remove(&j);
            self.metrics.pruned_candidates += 1;
        }
        Ok(())
    }

    /// Checks the structural invariants; meant for tests.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for q in &self.queries {
            if q.result.len() > q.k {
                return Err(format!("{:?} holds {} > k entries", q.id, q.result.len()));
            }
            if q.result.windows(2).any(|w| !w[0].key().outranks(&w[1].key())) {
                return Err(format!("{:?} result is not strictly sorted", q.id));
            }
            if self.qi.qmin_snapshot(q.id) != Some(q.qmin()) {
                return Err(format!("{:?} snapshot differs from qmin", q.id));
            }
            for e in &q.result {
                if !self.items[e.item.index()].active.contains(&q.id) {
                    return Err(format!("{:?} publishes {:?} but is not active there", q.id, e.item));
                }
            }
            for &j in self.reverse[q.id.index()].keys() {
                match self.candidate_list(j) {
                    Some(list) if list.contains(q.id) => {}
                    _ => return Err(format!("reverse index lists {:?} under {:?} without a list entry", q.id, j)),
                }
                if self.items[j.index()].active.contains(&q.id) {
                    return Err(format!("{:?} is active and candidate at {:?}", q.id, j));
                }
            }
        }
        for (idx, item) in self.items.iter().enumerate() {
            for &q in &item.active {
                if self.queries[q.index()].position_of(item.id).is_none() {
                    return Err(format!("{:?} active at {:?} without publishing it", q, item.id));
                }
            }
            if let Some(list) = &self.lists[idx] {
                for e in list.entries() {
                    if !self.reverse[e.query.index()].contains_key(&item.id) {
                        return Err(format!("{:?} in list of {:?} but not in reverse index", e.query, item.id));
                    }
                }
            }
        }
        Ok(())
    }
}

