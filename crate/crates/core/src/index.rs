//! Inverted indexes over registered queries (item matching) and over
//! ingested items (initial top-k of a new query).

use crate::error::{Error, Result};
use crate::model::{text_score, Item, ItemId, Query, QueryId, ResultEntry, ScoreConfig, TermId};

/// Slack for float comparisons that only decide whether exact scoring can be
/// skipped. Never used for a ranking decision.
#[inline]
pub(crate) fn slack(x: f64, y: f64) -> f64 {
    1e-9 * (1.0 + x.abs() + y.abs())
}

/// Per-call dedup marks, reset by bumping an epoch.
#[derive(Debug, Default)]
struct Marks {
    stamp: Vec<u32>,
    epoch: u32,
}

impl Marks {
    fn begin(&mut self, len: usize) {
        if self.stamp.len() < len {
            self.stamp.resize(len, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `index` is seen in this epoch.
    #[inline]
    fn first_visit(&mut self, index: usize) -> bool {
        let seen = self.stamp[index] == self.epoch;
        self.stamp[index] = self.epoch;
        !seen
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryPostingEntry {
    pub query: QueryId,
    pub weight: f64,
    /// Copy of the query's qmin, kept equal to the live value.
    pub qmin: f64,
}

/// A query the item currently beats, with the text score that was computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItemMatch {
    pub query: QueryId,
    pub text: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounters {
    pub calls: u64,
    pub gathered: u64,
    pub scored: u64,
    pub skipped: u64,
}

/// The item handler's query index.
#[derive(Debug)]
pub struct QueryIndex {
    postings: Vec<Vec<QueryPostingEntry>>,
    /// For each query, its (term, position) slots in the postings.
    slots: Vec<Vec<(TermId, u32)>>,
    marks: Marks,
    prune: bool,
    pub counters: MatchCounters,
}

impl Default for QueryIndex {
    fn default() -> Self {
        Self::new(true)
    }
}

impl QueryIndex {
    pub fn new(prune: bool) -> Self {
        Self { postings: Vec::new(), slots: Vec::new(), marks: Marks::default(), prune, counters: MatchCounters::default() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn posting(&self, term: TermId) -> &[QueryPostingEntry] {
        self.postings.get(term.index()).map_or(&[], Vec::as_slice)
    }

    pub fn add_query(&mut self, query: &Query) -> Result<()> {
        let expected = self.slots.len();
        match query.id.index() {
            i if i < expected => return Err(Error::DuplicateQuery(query.id)),
            i if i > expected => return Err(Error::NonSequentialId { expected, got: i }),
            _ => {}
        }
        let mut slots = Vec::with_capacity(query.terms.len());
        for &(term, weight) in query.terms.entries() {
            if self.postings.len() <= term.index() {
                self.postings.resize_with(term.index() + 1, Vec::new);
            }
            let posting = &mut self.postings[term.index()];
            slots.push((term, posting.len() as u32));
            posting.push(QueryPostingEntry { query: query.id, weight, qmin: query.qmin() });
        }
        self.slots.push(slots);
        Ok(())
    }

    pub fn qmin_snapshot(&self, query: QueryId) -> Option<f64> {
        let &(term, pos) = self.slots.get(query.index())?.first()?;
        Some(self.postings[term.index()][pos as usize].qmin)
    }

    pub fn update_qmin(&mut self, query: QueryId, new_qmin: f64) -> Result<()> {
        let slots = self.slots.get(query.index()).ok_or(Error::UnknownQuery(query))?;
        for &(term, pos) in slots {
            let entry = &mut self.postings[term.index()][pos as usize];
            if new_qmin < entry.qmin {
                return Err(Error::QminDecrease { query, previous: entry.qmin, new: new_qmin });
            }
            entry.qmin = new_qmin;
        }
        Ok(())
    }

    /// Queries whose result `item` enters when its dynamic score is
    /// `dyn_score`. Queries already publishing the item are not excluded.
    pub fn match_item(
        &mut self,
        item: &Item,
        dyn_score: f64,
        cfg: &ScoreConfig,
        queries: &[Query],
        out: &mut Vec<ItemMatch>,
    ) {
        out.clear();
        self.counters.calls += 1;
        self.marks.begin(self.slots.len());
        let bound = cfg.landmark_total(cfg.static_part(1.0, item.static_quality), dyn_score, item.ts);
        let bound = bound + slack(bound, 0.0);
        for term in item.terms.terms() {
            let Some(posting) = self.postings.get(term.index()) else { continue };
            for entry in posting {
                self.counters.gathered += 1;
                if !self.marks.first_visit(entry.query.index()) {
                    continue;
                }
                if self.prune && entry.qmin > bound {
                    self.counters.skipped += 1;
                    continue;
                }
                self.counters.scored += 1;
                let query = &queries[entry.query.index()];
                let text = text_score(&query.terms, &item.terms);
                if text <= 0.0 {
                    continue;
                }
                let score = cfg.landmark_total(cfg.static_part(text, item.static_quality), dyn_score, item.ts);
                if query.admits(&item.key(score)) {
                    out.push(ItemMatch { query: entry.query, text });
                }
            }
        }
    }
}

/// The query handler's item index.
#[derive(Debug, Default)]
pub struct ItemIndex {
    postings: Vec<Vec<(ItemId, f64)>>,
    len: usize,
    marks: Marks,
    pub updates: u64,
}

impl ItemIndex {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn posting(&self, term: TermId) -> &[(ItemId, f64)] {
        self.postings.get(term.index()).map_or(&[], Vec::as_slice)
    }

    pub fn add_item(&mut self, item: &Item) -> Result<()> {
        match item.id.index() {
            i if i < self.len => return Err(Error::DuplicateItem(item.id)),
            i if i > self.len => return Err(Error::NonSequentialId { expected: self.len, got: i }),
            _ => {}
        }
        for &(term, weight) in item.terms.entries() {
            if self.postings.len() <= term.index() {
                self.postings.resize_with(term.index() + 1, Vec::new);
            }
            self.postings[term.index()].push((item.id, weight));
        }
        self.len += 1;
        Ok(())
    }

    /// Dynamic scores live on the item records; this only validates the id
    /// and counts the touch.
    pub fn update_item(&mut self, item: ItemId) -> Result<()> {
        if item.index() >= self.len {
            return Err(Error::UnknownItem(item));
        }
        self.updates += 1;
        Ok(())
    }

    /// Top-k relevant items for `query`, best first. Every relevant item,
    /// with its text score, is left in `relevant`.
    pub fn match_query(
        &mut self,
        query: &Query,
        items: &[Item],
        cfg: &ScoreConfig,
        relevant: &mut Vec<(ItemId, f64)>,
    ) -> Vec<ResultEntry> {
        relevant.clear();
        self.marks.begin(self.len);
        for term in query.terms.terms() {
            let Some(posting) = self.postings.get(term.index()) else { continue };
            for &(id, _) in posting {
                if !self.marks.first_visit(id.index()) {
                    continue;
                }
                let text = text_score(&query.terms, &items[id.index()].terms);
                if text > 0.0 {
                    relevant.push((id, text));
                }
            }
        }
        let mut scored: Vec<ResultEntry> = relevant
            .iter()
            .map(|&(id, text)| {
                let item = &items[id.index()];
                let base = cfg.static_part(text, item.static_quality);
                ResultEntry { item: id, score: cfg.landmark_total(base, item.dyn_score, item.ts), ts: item.ts, base }
            })
            .collect();
        top_k(&mut scored, query.k);
        scored
    }
}

/// Truncates `entries` to its best `k`, sorted.
pub fn top_k(entries: &mut Vec<ResultEntry>, k: usize) {
    if entries.len() > k {
        entries.select_nth_unstable_by(k, |a, b| a.key().rank_cmp(&b.key()));
        entries.truncate(k);
    }
    entries.sort_unstable_by(|a, b| a.key().rank_cmp(&b.key()));
}
