//! Brute-force reference: results recomputed from first principles, no
//! indexes, no candidates, no thresholds.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{text_score, ItemId, Query, QueryId, Record, ResultEntry, ScoreConfig, TermProfile, Timestamp};

#[derive(Clone, Debug)]
struct OracleQuery {
    terms: TermProfile,
    k: usize,
    /// Every item with a positive text score, with that score.
    relevant: Vec<(ItemId, f64)>,
    result: Vec<ResultEntry>,
}

#[derive(Clone, Debug)]
struct OracleItem {
    terms: TermProfile,
    static_quality: f64,
    dyn_score: f64,
    ts: Timestamp,
    /// Queries with a positive text score.
    relevant: Vec<QueryId>,
}

#[derive(Clone, Debug)]
pub struct OracleState {
    cfg: ScoreConfig,
    queries: Vec<OracleQuery>,
    items: Vec<OracleItem>,
}

impl OracleState {
    pub fn new(cfg: ScoreConfig) -> Self {
        Self { cfg, queries: Vec::new(), items: Vec::new() }
    }

    pub fn score(&self) -> &ScoreConfig {
        &self.cfg
    }

    pub fn result(&self, query: QueryId) -> &[ResultEntry] {
        &self.queries[query.index()].result
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Applies one record and returns the queries whose top-k was recomputed.
    /// Only those can change: a result depends on nothing but the query's
    /// relevant items.
    pub fn step(&mut self, record: &Record) -> Result<Vec<QueryId>> {
        match record {
            Record::Query(q) => {
                if q.id.index() != self.queries.len() {
                    return Err(Error::NonSequentialId { expected: self.queries.len(), got: q.id.index() });
                }
                let mut relevant = Vec::new();
                for (idx, item) in self.items.iter_mut().enumerate() {
                    let text = text_score(&q.terms, &item.terms);
                    if text > 0.0 {
                        relevant.push((ItemId::from_index(idx), text));
                        item.relevant.push(q.id);
                    }
                }
                self.queries.push(OracleQuery { terms: q.terms.clone(), k: q.k, relevant, result: Vec::new() });
                self.recompute(q.id);
                Ok(vec![q.id])
            }
            Record::Item(i) => {
                if i.id.index() != self.items.len() {
                    return Err(Error::NonSequentialId { expected: self.items.len(), got: i.id.index() });
                }
                let mut relevant = Vec::new();
                for (idx, query) in self.queries.iter_mut().enumerate() {
                    let text = text_score(&query.terms, &i.terms);
                    if text > 0.0 {
                        query.relevant.push((i.id, text));
                        relevant.push(QueryId::from_index(idx));
                    }
                }
                self.items.push(OracleItem {
                    terms: i.terms.clone(),
                    static_quality: i.static_quality,
                    dyn_score: 0.0,
                    ts: i.ts,
                    relevant: relevant.clone(),
                });
                for &q in &relevant {
                    self.recompute(q);
                }
                Ok(relevant)
            }
            Record::Event(e) => {
                let item = self.items.get_mut(e.target.index()).ok_or(Error::UnknownItem(e.target))?;
                if !(0.0..=1.0).contains(&e.score) {
                    return Err(Error::InvalidEventScore(e.score));
                }
                if e.score == 0.0 {
                    return Ok(Vec::new());
                }
                item.dyn_score += e.score;
                let touched = item.relevant.clone();
                for &q in &touched {
                    self.recompute(q);
                }
                Ok(touched)
            }
        }
    }

    fn recompute(&mut self, q: QueryId) {
        let query = &self.queries[q.index()];
        let mut all: Vec<ResultEntry> = query
            .relevant
            .iter()
            .map(|&(id, text)| {
                let item = &self.items[id.index()];
                let base = self.cfg.static_part(text, item.static_quality);
                ResultEntry { item: id, score: self.cfg.landmark_total(base, item.dyn_score, item.ts), ts: item.ts, base }
            })
            .collect();
        let by_rank = |a: &ResultEntry, b: &ResultEntry| a.key().rank_cmp(&b.key());
        if all.len() > query.k {
            all.select_nth_unstable_by(query.k, by_rank);
            all.truncate(query.k);
        }
        all.sort_by(by_rank);
        self.queries[q.index()].result = all;
    }
}

/// Size guard; the oracle is quadratic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleCaps {
    pub max_records: usize,
    pub max_queries: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        Self { max_records: 200_000, max_queries: 20_000 }
    }
}

impl OracleCaps {
    pub fn check(&self, records: usize, queries: usize) -> Result<()> {
        if records > self.max_records {
            return Err(Error::OracleCap(format!("{records} records > {}", self.max_records)));
        }
        if queries > self.max_queries {
            return Err(Error::OracleCap(format!("{queries} queries > {}", self.max_queries)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mismatch {
    pub query: QueryId,
    pub position: usize,
    pub expected: Option<(ItemId, f64)>,
    pub actual: Option<(ItemId, f64)>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |e: Option<(ItemId, f64)>| match e {
            Some((item, score)) => format!("{}@{score}", item.0),
            None => "-".to_string(),
        };
        write!(
            f,
            "query={} position={} expected={} actual={}",
            self.query.0,
            self.position,
            show(self.expected),
            show(self.actual)
        )
    }
}

/// First divergence of two ordered results, comparing ids and exact scores.
pub fn diff_results(query: QueryId, expected: &[ResultEntry], actual: &[ResultEntry]) -> Option<Mismatch> {
    let n = expected.len().max(actual.len());
    (0..n).find_map(|position| {
        let e = expected.get(position).map(|e| (e.item, e.score));
        let a = actual.get(position).map(|e| (e.item, e.score));
        let same = match (e, a) {
            (Some(x), Some(y)) => x.0 == y.0 && x.1.to_bits() == y.1.to_bits(),
            _ => false,
        };
        (!same).then_some(Mismatch { query, position, expected: e, actual: a })
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MismatchReport {
    pub mismatches: Vec<Mismatch>,
}

impl MismatchReport {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for MismatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.mismatches {
            writeln!(f, "{m}")?;
        }
        Ok(())
    }
}

/// Compares every query; the engine side is its query registry.
pub fn diff_states(engine: &[Query], oracle: &OracleState) -> MismatchReport {
    diff_queries(engine, oracle, (0..engine.len().max(oracle.len())).map(QueryId::from_index))
}

pub fn diff_queries(
    engine: &[Query],
    oracle: &OracleState,
    queries: impl IntoIterator<Item = QueryId>,
) -> MismatchReport {
    let mismatches = queries
        .into_iter()
        .filter_map(|q| {
            let actual = engine.get(q.index()).map_or(&[][..], |x| &x.result);
            let expected = if q.index() < oracle.len() { oracle.result(q) } else { &[] };
            diff_results(q, expected, actual)
        })
        .collect();
    MismatchReport { mismatches }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Event, Item, TermId};

    fn terms(ids: &[u32]) -> TermProfile {
        TermProfile::new(ids.iter().map(|&t| (TermId(t), 1.0)).collect()).unwrap()
    }

    #[test]
    fn single_query_on_empty_state() {
        let mut o = OracleState::new(ScoreConfig::default());
        let touched = o.step(&Record::Query(Query::new(QueryId(0), terms(&[1]), 2, 0.0))).unwrap();
        assert_eq!(touched, vec![QueryId(0)]);
        assert!(o.result(QueryId(0)).is_empty());
    }

    #[test]
    fn event_reorders() {
        let mut o = OracleState::new(ScoreConfig::default());
        o.step(&Record::Query(Query::new(QueryId(0), terms(&[1]), 1, 0.0))).unwrap();
        for (i, s) in [0.9, 0.1].into_iter().enumerate() {
            let item = Item::new(ItemId(i as u32), terms(&[1]), s, 1.0);
            o.step(&Record::Item(item)).unwrap();
        }
        assert_eq!(o.result(QueryId(0))[0].item, ItemId(0));
        // 0.3 + 0.03 + 0.4 * 2 beats 0.3 + 0.27
        for id in 0..2 {
            o.step(&Record::Event(Event { id, target: ItemId(1), score: 1.0, ts: 2.0 })).unwrap();
        }
        assert_eq!(o.result(QueryId(0))[0].item, ItemId(1));
        let irrelevant = Item::new(ItemId(2), terms(&[9]), 1.0, 3.0);
        assert!(o.step(&Record::Item(irrelevant)).unwrap().is_empty());
    }

    #[test]
    fn diffs() {
        let e = |item: u32, score: f64| ResultEntry { item: ItemId(item), score, ts: 0.0, base: 0.0 };
        let a = [e(1, 0.9), e(2, 0.5)];
        assert_eq!(diff_results(QueryId(3), &a, &a), None);
        let swapped = [e(2, 0.5), e(1, 0.9)];
        let m = diff_results(QueryId(3), &a, &swapped).unwrap();
        assert_eq!((m.query, m.position), (QueryId(3), 0));
        assert_eq!(m.to_string(), "query=3 position=0 expected=1@0.9 actual=2@0.5");
        let m = diff_results(QueryId(0), &a, &a[..1]).unwrap();
        assert_eq!((m.position, m.actual), (1, None));
        let m = diff_results(QueryId(0), &a, &[e(1, 0.9), e(2, 0.5000000001)]).unwrap();
        assert_eq!(m.position, 1);
    }

    #[test]
    fn caps() {
        let caps = OracleCaps { max_records: 10, max_queries: 2 };
        assert!(caps.check(10, 2).is_ok());
        assert!(matches!(caps.check(11, 0), Err(Error::OracleCap(_))));
        assert!(caps.check(0, 3).is_err());
    }
}
