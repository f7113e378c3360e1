//! Per-item candidate lists for event matching.
//!
//! A candidate of item `i` is a query that does not publish `i` yet but whose
//! qmin lies inside `i`'s threshold window. Every entry carries a *diff*: the
//! query's qmin minus the landmark score `i` would have with no feedback, i.e.
//! the dynamic mass (`gamma * dyn`) `i` still needs to enter the query's
//! result. qmin never decreases, so a diff computed in the past is a lower
//! bound of the current one; that is what makes the stopping conditions
//! below safe.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::index::slack;
use crate::model::{ItemId, QueryId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexVariant {
    /// Unordered vector, every candidate probed.
    Simple,
    /// Sorted once when built; later insertions go to the front.
    Static,
    /// Sorted; false positives are re-sorted when probed.
    Lazy,
    /// Sorted and kept exact on every qmin change.
    Exhaustive,
    /// Sorted groups keyed by each candidate's k-th result item.
    ItemPart,
}

impl IndexVariant {
    pub const ALL: [IndexVariant; 5] =
        [IndexVariant::Simple, IndexVariant::Static, IndexVariant::Lazy, IndexVariant::Exhaustive, IndexVariant::ItemPart];

    pub fn name(self) -> &'static str {
        match self {
            IndexVariant::Simple => "simple",
            IndexVariant::Static => "static",
            IndexVariant::Lazy => "lazy",
            IndexVariant::Exhaustive => "exhaustive",
            IndexVariant::ItemPart => "itempart",
        }
    }

    /// Whether qmin changes must be pushed into the lists holding a query.
    pub fn tracks_qmin(self) -> bool {
        matches!(self, IndexVariant::Exhaustive | IndexVariant::ItemPart)
    }
}

impl fmt::Display for IndexVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IndexVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown candidate index {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateEntry {
    pub query: QueryId,
    /// Diff when the entry was (re)computed.
    pub diff: f64,
    /// The query's k-th result item at that time.
    pub kth: Option<ItemId>,
    /// Dynamic score of `kth` at that time (0 without one).
    pub kth_dyn: f64,
    /// `alpha * text + beta * static` of the (query, item) pair.
    pub base: f64,
}

/// What a list needs from the engine while matching an event.
pub trait ProbeContext {
    /// Exact check: does the item now enter the query's result?
    fn probe(&mut self, query: QueryId, base: f64) -> bool;
    /// Current exact diff of the query for this item.
    fn diff(&self, query: QueryId, base: f64) -> f64;
    fn item_dyn(&self, item: ItemId) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ListCounters {
    /// Probes performed.
    pub visited: u64,
    /// Sum of list sizes at probe time.
    pub sized: u64,
    /// Traversals of a non-empty list.
    pub traversals: u64,
    /// Sum over traversals of `probes / size`.
    pub fraction_sum: f64,
}

#[derive(Debug, Clone)]
pub struct CandidateList {
    store: Store,
    pub counters: ListCounters,
}

#[derive(Debug, Clone)]
enum Store {
    Simple(SimpleList),
    Static(StaticList),
    Lazy(SortedList),
    Exhaustive(SortedList),
    ItemPart(PartitionedList),
}

impl CandidateList {
    pub fn new(variant: IndexVariant, gamma: f64) -> Self {
        let store = match variant {
            IndexVariant::Simple => Store::Simple(SimpleList::default()),
            IndexVariant::Static => Store::Static(StaticList::default()),
            IndexVariant::Lazy => Store::Lazy(SortedList::default()),
            IndexVariant::Exhaustive => Store::Exhaustive(SortedList::default()),
            IndexVariant::ItemPart => Store::ItemPart(PartitionedList::new(gamma)),
        };
        Self { store, counters: ListCounters::default() }
    }

    pub fn build(variant: IndexVariant, gamma: f64, entries: Vec<CandidateEntry>) -> Result<Self> {
        let mut list = Self::new(variant, gamma);
        match &mut list.store {
            Store::Simple(s) => {
                for e in entries {
                    s.insert(e)?;
                }
            }
            Store::Static(s) => s.build(entries)?,
            Store::Lazy(s) | Store::Exhaustive(s) => s.build(entries)?,
            Store::ItemPart(s) => s.build(entries)?,
        }
        Ok(list)
    }

    pub fn variant(&self) -> IndexVariant {
        match self.store {
            Store::Simple(_) => IndexVariant::Simple,
            Store::Static(_) => IndexVariant::Static,
            Store::Lazy(_) => IndexVariant::Lazy,
            Store::Exhaustive(_) => IndexVariant::Exhaustive,
            Store::ItemPart(_) => IndexVariant::ItemPart,
        }
    }

    pub fn len(&self) -> usize {
        match &self.store {
            Store::Simple(s) => s.entries.len(),
            Store::Static(s) => s.len(),
            Store::Lazy(s) | Store::Exhaustive(s) => s.member.len(),
            Store::ItemPart(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, query: QueryId) -> bool {
        match &self.store {
            Store::Simple(s) => s.pos.contains_key(&query),
            Store::Static(s) => s.find(query).is_some(),
            Store::Lazy(s) | Store::Exhaustive(s) => s.member.contains_key(&query),
            Store::ItemPart(s) => s.find(query).is_some(),
        }
    }

    pub fn insert(&mut self, entry: CandidateEntry) -> Result<()> {
        match &mut self.store {
            Store::Simple(s) => s.insert(entry),
            Store::Static(s) => s.insert_front(entry),
            Store::Lazy(s) | Store::Exhaustive(s) => s.insert(entry),
            Store::ItemPart(s) => s.insert(entry),
        }
    }

    /// Removes a query; absent queries are ignored.
    pub fn remove(&mut self, query: QueryId) -> Option<CandidateEntry> {
        match &mut self.store {
            Store::Simple(s) => s.remove(query),
            Store::Static(s) => s.remove(query),
            Store::Lazy(s) | Store::Exhaustive(s) => s.remove(query),
            Store::ItemPart(s) => s.remove(query),
        }
    }

    /// Entries in traversal order (groups in unspecified order for ItemPart).
    pub fn entries(&self) -> Vec<CandidateEntry> {
        match &self.store {
            Store::Simple(s) => s.entries.clone(),
            Store::Static(s) => s.front.iter().map(|q| s.front_member[q]).chain(s.sorted.walk(|_| true).copied()).collect(),
            Store::Lazy(s) | Store::Exhaustive(s) => s.walk(|_| true).copied().collect(),
            Store::ItemPart(s) => s.groups().into_iter().flat_map(|(_, g)| g).collect(),
        }
    }

    /// Queries in this list, in no particular order.
    pub fn queries(&self) -> Vec<QueryId> {
        match &self.store {
            Store::Simple(s) => s.entries.iter().map(|e| e.query).collect(),
            Store::Static(s) => s.front.iter().chain(s.sorted.member.keys()).copied().collect(),
            Store::Lazy(s) | Store::Exhaustive(s) => s.member.keys().copied().collect(),
            Store::ItemPart(s) => s.queries(),
        }
    }

    pub fn base_of(&self, query: QueryId) -> Option<f64> {
        match &self.store {
            Store::Simple(s) => s.pos.get(&query).map(|&p| s.entries[p as usize].base),
            Store::Static(s) => s.find(query).map(|e| e.base),
            Store::Lazy(s) | Store::Exhaustive(s) => s.member.get(&query).map(|e| e.base),
            Store::ItemPart(s) => s.find(query).map(|e| e.base),
        }
    }

    /// Groups keyed by k-th item; `None` for non-partitioned lists.
    pub fn groups(&self) -> Option<Vec<(Option<ItemId>, Vec<CandidateEntry>)>> {
        match &self.store {
            Store::ItemPart(s) => Some(s.groups()),
            _ => None,
        }
    }

    /// Finds the candidates the event's item now enters. `mass` is
    /// `gamma * dyn` of the item after the event. Pushes `(query, base)` for
    /// every update; returns the probe count.
    pub fn match_event(&mut self, mass: f64, ctx: &mut dyn ProbeContext, out: &mut Vec<(QueryId, f64)>) -> u64 {
        out.clear();
        let size = self.len();
        if size == 0 {
            return 0;
        }
        let limit = mass + slack(mass, 0.0);
        let mut probes = 0;
        let mut probe = |e: &CandidateEntry, ctx: &mut dyn ProbeContext| {
            probes += 1;
            let hit = ctx.probe(e.query, e.base);
            if hit {
                out.push((e.query, e.base));
            }
            hit
        };
        match &mut self.store {
            Store::Simple(s) => {
                for e in &s.entries {
                    probe(e, ctx);
                }
            }
            Store::Static(s) => {
                // front insertions have no usable diff
                for q in &s.front {
                    probe(&s.front_member[q], ctx);
                }
                for e in s.sorted.walk(|diff| diff <= limit) {
                    probe(e, ctx);
                }
            }
            Store::Lazy(s) => {
                let mut stale = Vec::new();
                for e in s.walk(|diff| diff <= limit) {
                    if !probe(e, ctx) {
                        let current = ctx.diff(e.query, e.base);
                        if current > e.diff {
                            stale.push((e.query, current));
                        }
                    }
                }
                for (query, diff) in stale {
                    s.reposition(query, diff);
                }
            }
            Store::Exhaustive(s) => {
                for e in s.walk(|diff| diff <= limit) {
                    probe(e, ctx);
                }
            }
            Store::ItemPart(s) => s.traverse(limit, ctx, &mut probe),
        }
        self.counters.visited += probes;
        self.counters.sized += size as u64;
        self.counters.traversals += 1;
        self.counters.fraction_sum += probes as f64 / size as f64;
        probes
    }

    /// Pushes a qmin change of `query` into this list. Only the exhaustive
    /// and partitioned organizations react.
    pub fn on_qmin_change(&mut self, query: QueryId, diff: f64, kth: Option<ItemId>, kth_dyn: f64) {
        match &mut self.store {
            Store::Exhaustive(s) => s.reposition(query, diff),
            Store::ItemPart(s) => s.on_qmin_change(query, diff, kth, kth_dyn),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Default)]
struct SimpleList {
    entries: Vec<CandidateEntry>,
    pos: FxHashMap<QueryId, u32>,
}

impl SimpleList {
    fn insert(&mut self, entry: CandidateEntry) -> Result<()> {
        if self.pos.contains_key(&entry.query) {
            return Err(Error::DuplicateCandidate(entry.query));
        }
        self.pos.insert(entry.query, self.entries.len() as u32);
        self.entries.push(entry);
        Ok(())
    }

    fn remove(&mut self, query: QueryId) -> Option<CandidateEntry> {
        let pos = self.pos.remove(&query)? as usize;
        let removed = self.entries.swap_remove(pos);
        if let Some(moved) = self.entries.get(pos) {
            self.pos.insert(moved.query, pos as u32);
        }
        Some(removed)
    }
}

/// Total order on diffs as integers.
fn diff_key(diff: f64) -> u64 {
    let bits = diff.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 1 << 63
    }
}

fn key_diff(key: u64) -> f64 {
    f64::from_bits(if key >> 63 == 1 { key & !(1 << 63) } else { !key })
}

type RunKey = (u64, QueryId);

fn run_key(e: &CandidateEntry) -> RunKey {
    (diff_key(e.diff), e.query)
}

/// Keys ascending by (diff, query): a sorted vector while small, a B-tree
/// once shifting elements would dominate. Entries live in the owner's
/// membership map.
#[derive(Debug, Clone)]
enum SortedRun {
    Small(Vec<RunKey>),
    Large(BTreeSet<RunKey>),
}

impl Default for SortedRun {
    fn default() -> Self {
        SortedRun::Small(Vec::new())
    }
}

impl SortedRun {
    const PROMOTE: usize = 256;

    fn from_unsorted(mut keys: Vec<RunKey>) -> Self {
        if keys.len() > Self::PROMOTE {
            SortedRun::Large(keys.into_iter().collect())
        } else {
            keys.sort_unstable();
            SortedRun::Small(keys)
        }
    }

    fn insert(&mut self, key: RunKey) {
        match self {
            SortedRun::Small(v) => {
                let at = v.partition_point(|k| *k < key);
                v.insert(at, key);
                if v.len() > Self::PROMOTE {
                    *self = SortedRun::Large(v.drain(..).collect());
                }
            }
            SortedRun::Large(m) => {
                m.insert(key);
            }
        }
    }

    fn remove(&mut self, key: RunKey) -> bool {
        match self {
            SortedRun::Small(v) => match v.binary_search(&key) {
                Ok(at) => {
                    v.remove(at);
                    true
                }
                Err(_) => false,
            },
            SortedRun::Large(m) => m.remove(&key),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            SortedRun::Small(v) => v.is_empty(),
            SortedRun::Large(m) => m.is_empty(),
        }
    }

    fn iter(&self) -> RunIter<'_> {
        match self {
            SortedRun::Small(v) => RunIter::Small(v.iter()),
            SortedRun::Large(m) => RunIter::Large(m.iter()),
        }
    }
}

enum RunIter<'a> {
    Small(std::slice::Iter<'a, RunKey>),
    Large(std::collections::btree_set::Iter<'a, RunKey>),
}

impl Iterator for RunIter<'_> {
    type Item = (f64, QueryId);

    fn next(&mut self) -> Option<Self::Item> {
        let &(key, query) = match self {
            RunIter::Small(it) => it.next(),
            RunIter::Large(it) => it.next(),
        }?;
        Some((key_diff(key), query))
    }
}

/// One sorted run plus the entries by query.
#[derive(Debug, Clone, Default)]
struct SortedList {
    run: SortedRun,
    member: FxHashMap<QueryId, CandidateEntry>,
}

impl SortedList {
    fn build(&mut self, entries: Vec<CandidateEntry>) -> Result<()> {
        let keys = entries.iter().map(run_key).collect();
        for e in entries {
            if self.member.insert(e.query, e).is_some() {
                return Err(Error::DuplicateCandidate(e.query));
            }
        }
        self.run = SortedRun::from_unsorted(keys);
        Ok(())
    }

    fn insert(&mut self, entry: CandidateEntry) -> Result<()> {
        if self.member.contains_key(&entry.query) {
            return Err(Error::DuplicateCandidate(entry.query));
        }
        self.member.insert(entry.query, entry);
        self.run.insert(run_key(&entry));
        Ok(())
    }

    fn remove(&mut self, query: QueryId) -> Option<CandidateEntry> {
        let entry = self.member.remove(&query)?;
        self.run.remove(run_key(&entry));
        Some(entry)
    }

    fn reposition(&mut self, query: QueryId, diff: f64) {
        let Some(entry) = self.member.get_mut(&query) else { return };
        self.run.remove(run_key(entry));
        entry.diff = diff;
        self.run.insert(run_key(entry));
    }

    /// Entries in run order while `keep(diff)` holds.
    fn walk(&self, keep: impl Fn(f64) -> bool) -> impl Iterator<Item = &CandidateEntry> {
        self.run.iter().take_while(move |&(diff, _)| keep(diff)).map(|(_, q)| &self.member[&q])
    }
}

/// Sorted at build time only. Later insertions go to `front`, carry the
/// sentinel diff 0 and are always probed.
#[derive(Debug, Clone, Default)]
struct StaticList {
    front: Vec<QueryId>,
    sorted: SortedList,
    front_member: FxHashMap<QueryId, CandidateEntry>,
}

impl StaticList {
    fn build(&mut self, entries: Vec<CandidateEntry>) -> Result<()> {
        self.sorted.build(entries)
    }

    fn len(&self) -> usize {
        self.front.len() + self.sorted.member.len()
    }

    fn find(&self, query: QueryId) -> Option<&CandidateEntry> {
        self.front_member.get(&query).or_else(|| self.sorted.member.get(&query))
    }

    fn insert_front(&mut self, mut entry: CandidateEntry) -> Result<()> {
        if self.find(entry.query).is_some() {
            return Err(Error::DuplicateCandidate(entry.query));
        }
        entry.diff = 0.0;
        self.front_member.insert(entry.query, entry);
        self.front.push(entry.query);
        Ok(())
    }

    fn remove(&mut self, query: QueryId) -> Option<CandidateEntry> {
        match self.front_member.remove(&query) {
            Some(entry) => {
                let at = self.front.iter().position(|&q| q == query).expect("front mirrors its map");
                self.front.swap_remove(at);
                Some(entry)
            }
            None => self.sorted.remove(query),
        }
    }
}

/// Candidates sharing a k-th item. Their diffs all move by
/// `gamma * (dyn(kth) - dyn_ref)` while the k-th item stays the same, so the
/// stored values only need that common offset to be current.
#[derive(Debug, Clone, Default)]
struct Group {
    dyn_ref: f64,
    run: SortedRun,
}

/// ItemPart storage. Small lists keep every group as a contiguous run of
/// one vector sorted by (k-th item, diff, query); each entry's `kth_dyn`
/// holds its group's reference dynamic score. Larger lists switch to one
/// sorted run per group.
#[derive(Debug, Clone)]
struct PartitionedList {
    gamma: f64,
    layout: Layout,
}

#[derive(Debug, Clone)]
enum Layout {
    Flat(Vec<CandidateEntry>),
    Map(GroupMap),
}

fn flat_key(e: &CandidateEntry) -> (Option<ItemId>, u64, QueryId) {
    (e.kth, diff_key(e.diff), e.query)
}

impl PartitionedList {
    const FLAT_MAX: usize = 32;

    fn new(gamma: f64) -> Self {
        Self { gamma, layout: Layout::Flat(Vec::new()) }
    }

    fn build(&mut self, entries: Vec<CandidateEntry>) -> Result<()> {
        if entries.len() > Self::FLAT_MAX {
            let mut map = GroupMap { gamma: self.gamma, ..Default::default() };
            map.build(entries)?;
            self.layout = Layout::Map(map);
            return Ok(());
        }
        self.layout = Layout::Flat(Vec::with_capacity(entries.len()));
        entries.into_iter().try_for_each(|e| self.insert(e))
    }

    fn len(&self) -> usize {
        match &self.layout {
            Layout::Flat(v) => v.len(),
            Layout::Map(m) => m.member.len(),
        }
    }

    fn find(&self, query: QueryId) -> Option<&CandidateEntry> {
        match &self.layout {
            Layout::Flat(v) => v.iter().find(|e| e.query == query),
            Layout::Map(m) => m.member.get(&query),
        }
    }

    fn queries(&self) -> Vec<QueryId> {
        match &self.layout {
            Layout::Flat(v) => v.iter().map(|e| e.query).collect(),
            Layout::Map(m) => m.member.keys().copied().collect(),
        }
    }

    fn groups(&self) -> Vec<(Option<ItemId>, Vec<CandidateEntry>)> {
        let mut groups: Vec<(Option<ItemId>, Vec<CandidateEntry>)> = match &self.layout {
            Layout::Flat(v) => v.chunk_by(|a, b| a.kth == b.kth).map(|g| (g[0].kth, g.to_vec())).collect(),
            Layout::Map(m) => m.groups.iter().map(|(k, g)| (*k, g.run.iter().map(|(_, q)| m.member[&q]).collect())).collect(),
        };
        groups.sort_by_key(|(k, _)| *k);
        groups
    }

    /// Places `entry` in its group, rebasing the diff on the group's
    /// reference when the group already exists.
    fn flat_insert(v: &mut Vec<CandidateEntry>, gamma: f64, mut entry: CandidateEntry) {
        let start = v.partition_point(|e| e.kth < entry.kth);
        if entry.kth.is_some() {
            if let Some(head) = v.get(start).filter(|e| e.kth == entry.kth) {
                entry.diff -= gamma * (entry.kth_dyn - head.kth_dyn);
                entry.kth_dyn = head.kth_dyn;
            }
        }
        let key = flat_key(&entry);
        let at = start + v[start..].partition_point(|e| flat_key(e) < key);
        v.insert(at, entry);
    }

    fn insert(&mut self, entry: CandidateEntry) -> Result<()> {
        match &mut self.layout {
            Layout::Flat(v) => {
                if v.iter().any(|e| e.query == entry.query) {
                    return Err(Error::DuplicateCandidate(entry.query));
                }
                Self::flat_insert(v, self.gamma, entry);
                if v.len() > Self::FLAT_MAX {
                    let mut map = GroupMap { gamma: self.gamma, ..Default::default() };
                    map.build(std::mem::take(v))?;
                    self.layout = Layout::Map(map);
                }
                Ok(())
            }
            Layout::Map(m) => m.insert(entry),
        }
    }

    fn remove(&mut self, query: QueryId) -> Option<CandidateEntry> {
        match &mut self.layout {
            Layout::Flat(v) => {
                let at = v.iter().position(|e| e.query == query)?;
                Some(v.remove(at))
            }
            Layout::Map(m) => m.remove(query),
        }
    }

    fn on_qmin_change(&mut self, query: QueryId, diff: f64, kth: Option<ItemId>, kth_dyn: f64) {
        match &mut self.layout {
            Layout::Flat(v) => {
                let Some(at) = v.iter().position(|e| e.query == query) else { return };
                if v[at].kth == kth {
                    return;
                }
                let mut entry = v.remove(at);
                entry.diff = diff;
                entry.kth = kth;
                entry.kth_dyn = kth_dyn;
                Self::flat_insert(v, self.gamma, entry);
            }
            Layout::Map(m) => m.on_qmin_change(query, diff, kth, kth_dyn),
        }
    }

    fn traverse(&self, limit: f64, ctx: &mut dyn ProbeContext, probe: &mut dyn FnMut(&CandidateEntry, &mut dyn ProbeContext) -> bool) {
        match &self.layout {
            Layout::Flat(v) => {
                let mut at = 0;
                while at < v.len() {
                    let head = v[at];
                    let end = at + v[at..].partition_point(|e| e.kth == head.kth);
                    let shift = match head.kth {
                        Some(item) => self.gamma * (ctx.item_dyn(item) - head.kth_dyn),
                        None => f64::NEG_INFINITY,
                    };
                    for e in v[at..end].iter().take_while(|e| e.diff + shift <= limit) {
                        probe(e, ctx);
                    }
                    at = end;
                }
            }
            Layout::Map(m) => m.traverse(limit, ctx, probe),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct GroupMap {
    gamma: f64,
    groups: FxHashMap<Option<ItemId>, Group>,
    /// Entries by query; `kth` names the group and `diff` the key in it.
    member: FxHashMap<QueryId, CandidateEntry>,
}

impl GroupMap {
    fn build(&mut self, entries: Vec<CandidateEntry>) -> Result<()> {
        let mut grouped: FxHashMap<Option<ItemId>, (f64, Vec<RunKey>)> = FxHashMap::default();
        for mut e in entries {
            let (dyn_ref, keys) = grouped.entry(e.kth).or_insert_with(|| (e.kth_dyn, Vec::new()));
            if e.kth.is_some() {
                e.diff -= self.gamma * (e.kth_dyn - *dyn_ref);
                e.kth_dyn = *dyn_ref;
            }
            if self.member.insert(e.query, e).is_some() {
                return Err(Error::DuplicateCandidate(e.query));
            }
            keys.push(run_key(&e));
        }
        self.groups = grouped
            .into_iter()
            .map(|(kth, (dyn_ref, keys))| (kth, Group { dyn_ref, run: SortedRun::from_unsorted(keys) }))
            .collect();
        Ok(())
    }

    /// Rebases `entry` on its group's reference and stores the key.
    fn place(groups: &mut FxHashMap<Option<ItemId>, Group>, gamma: f64, entry: &mut CandidateEntry) {
        let group = groups.entry(entry.kth).or_insert_with(|| Group { dyn_ref: entry.kth_dyn, run: SortedRun::default() });
        if entry.kth.is_some() {
            entry.diff -= gamma * (entry.kth_dyn - group.dyn_ref);
            entry.kth_dyn = group.dyn_ref;
        }
        group.run.insert(run_key(entry));
    }

    fn unplace(groups: &mut FxHashMap<Option<ItemId>, Group>, entry: &CandidateEntry) {
        let group = groups.get_mut(&entry.kth).expect("member has a group");
        group.run.remove(run_key(entry));
        if group.run.is_empty() {
            groups.remove(&entry.kth);
        }
    }

    fn insert(&mut self, mut entry: CandidateEntry) -> Result<()> {
        if self.member.contains_key(&entry.query) {
            return Err(Error::DuplicateCandidate(entry.query));
        }
        Self::place(&mut self.groups, self.gamma, &mut entry);
        self.member.insert(entry.query, entry);
        Ok(())
    }

    fn remove(&mut self, query: QueryId) -> Option<CandidateEntry> {
        let entry = self.member.remove(&query)?;
        Self::unplace(&mut self.groups, &entry);
        Some(entry)
    }

    fn on_qmin_change(&mut self, query: QueryId, diff: f64, kth: Option<ItemId>, kth_dyn: f64) {
        let Some(entry) = self.member.get_mut(&query) else { return };
        if entry.kth == kth {
            return;
        }
        Self::unplace(&mut self.groups, entry);
        entry.diff = diff;
        entry.kth = kth;
        entry.kth_dyn = kth_dyn;
        Self::place(&mut self.groups, self.gamma, entry);
    }

    fn traverse(&self, limit: f64, ctx: &mut dyn ProbeContext, probe: &mut dyn FnMut(&CandidateEntry, &mut dyn ProbeContext) -> bool) {
        for (kth, group) in &self.groups {
            let shift = match kth {
                Some(item) => self.gamma * (ctx.item_dyn(*item) - group.dyn_ref),
                None => f64::NEG_INFINITY,
            };
            for (_, q) in group.run.iter().take_while(|&(diff, _)| diff + shift <= limit) {
                probe(&self.member[&q], ctx);
            }
        }
    }
}
