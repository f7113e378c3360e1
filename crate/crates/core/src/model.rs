//! Domain types and the scoring functions shared by the engine and the oracle.
//!
//! All scores that are stored or compared are *landmark* scores: the raw
//! total score rebased to the stream origin, so that linear time decay never
//! has to be re-applied to stored values. Comparing two landmark scores at any
//! common instant gives the same order as comparing their forward-decayed
//! values at that instant.

use std::cmp::Ordering;
use std::fmt;

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};

/// Seconds since the stream origin.
pub type Timestamp = f64;

macro_rules! dense_id {
    ($name:ident) => {
        #[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(index: usize) -> Self {
                Self(u32::try_from(index).expect("id space exhausted"))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.0)
            }
        }
    };
}

dense_id!(QueryId);
dense_id!(ItemId);
dense_id!(TermId);

/// Sparse term-weight vector with a cached Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct TermProfile {
    entries: Vec<(TermId, f64)>,
    norm: f64,
}

impl TermProfile {
    /// Builds a profile; repeated terms have their weights summed.
    pub fn new(mut entries: Vec<(TermId, f64)>) -> Result<Self> {
        for &(term, weight) in &entries {
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::InvalidWeight { term: format!("{term:?}"), weight });
            }
        }
        entries.sort_by_key(|&(term, _)| term);
        entries.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        let norm = entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
        Ok(Self { entries, norm })
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new(), norm: 0.0 }
    }

    pub fn entries(&self) -> &[(TermId, f64)] {
        &self.entries
    }

    pub fn terms(&self) -> impl Iterator<Item = TermId> + '_ {
        self.entries.iter().map(|&(t, _)| t)
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cosine similarity of two profiles, in `[0, 1]`.
///
/// Shared terms are accumulated in ascending term order, so the result is
/// bit-identical regardless of argument order.
pub fn text_score(a: &TermProfile, b: &TermProfile) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    let (mut x, mut y) = (a.entries.iter().peekable(), b.entries.iter().peekable());
    let mut dot = 0.0;
    while let (Some(&&(ta, wa)), Some(&&(tb, wb))) = (x.peek(), y.peek()) {
        match ta.cmp(&tb) {
            Ordering::Less => {
                x.next();
            }
            Ordering::Greater => {
                y.next();
            }
            Ordering::Equal => {
                dot += wa * wb;
                x.next();
                y.next();
            }
        }
    }
    if dot == 0.0 {
        return 0.0;
    }
    (dot / (a.norm * b.norm)).min(1.0)
}

/// Score weights and the linear decay horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Time for a score of 1.0 to decay to 0; `f64::INFINITY` disables decay.
    pub decay_horizon: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.3, gamma: 0.4, decay_horizon: f64::INFINITY }
    }
}

impl ScoreConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64, decay_horizon: f64) -> Result<Self> {
        for (name, w) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a non-negative real, got {w}")));
            }
        }
        if ((alpha + beta + gamma) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "alpha + beta + gamma must equal 1, got {}",
                alpha + beta + gamma
            )));
        }
        if !(decay_horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("decay horizon must be positive, got {decay_horizon}")));
        }
        Ok(Self { alpha, beta, gamma, decay_horizon })
    }

    /// Weights for a given dynamic weight, splitting the rest evenly.
    pub fn with_gamma(gamma: f64, decay_horizon: f64) -> Result<Self> {
        let rest = (1.0 - gamma) / 2.0;
        Self::new(rest, rest, gamma, decay_horizon)
    }

    /// The query-dependent but time-invariant part of the total score.
    #[inline]
    pub fn static_part(&self, text: f64, static_quality: f64) -> f64 {
        self.alpha * text + self.beta * static_quality
    }

    #[inline]
    pub fn total(&self, static_part: f64, dyn_score: f64) -> f64 {
        static_part + self.gamma * dyn_score
    }

    #[inline]
    pub fn landmark(&self, raw: f64, ts: Timestamp) -> f64 {
        if self.decay_horizon.is_infinite() {
            raw
        } else {
            raw + ts / self.decay_horizon
        }
    }

    /// Landmark total score. Every stored or compared score goes through here.
    #[inline]
    pub fn landmark_total(&self, static_part: f64, dyn_score: f64, ts: Timestamp) -> f64 {
        self.landmark(self.total(static_part, dyn_score), ts)
    }

    /// The decayed score as observed at `now`.
    pub fn forward_decayed(&self, raw: f64, ts: Timestamp, now: Timestamp) -> f64 {
        if self.decay_horizon.is_infinite() {
            raw
        } else {
            raw - (now - ts) / self.decay_horizon
        }
    }
}

/// `alpha * text + beta * static + gamma * dyn` for a query/item pair.
pub fn total_score(query: &Query, item: &Item, dyn_score: f64, cfg: &ScoreConfig) -> f64 {
    let text = text_score(&query.terms, &item.terms);
    cfg.total(cfg.static_part(text, item.static_quality), dyn_score)
}

pub fn to_landmark(raw: f64, item_ts: Timestamp, cfg: &ScoreConfig) -> f64 {
    cfg.landmark(raw, item_ts)
}

/// Folds one event into its target's aggregated dynamic score.
pub fn aggregate_event(item: &mut Item, event: &Event) -> Result<()> {
    if event.target != item.id {
        return Err(Error::UnknownItem(event.target));
    }
    if !(0.0..=1.0).contains(&event.score) {
        return Err(Error::InvalidEventScore(event.score));
    }
    item.dyn_score += event.score;
    Ok(())
}

/// Position of an item in a ranking: landmark score, then recency, then id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankKey {
    pub score: f64,
    pub ts: Timestamp,
    pub item: ItemId,
}

impl RankKey {
    /// True iff `self` ranks strictly before `other`.
    #[inline]
    pub fn outranks(&self, other: &RankKey) -> bool {
        self.rank_cmp(other) == Ordering::Less
    }

    /// Ordering where `Less` means "ranks first".
    #[inline]
    pub fn rank_cmp(&self, other: &RankKey) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| other.ts.total_cmp(&self.ts))
            .then_with(|| self.item.cmp(&other.item))
    }
}

/// One entry of a query's result list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultEntry {
    pub item: ItemId,
    /// Landmark total score at the item's current dynamic score.
    pub score: f64,
    pub ts: Timestamp,
    /// `alpha * text + beta * static` for this (query, item) pair.
    pub base: f64,
}

impl ResultEntry {
    #[inline]
    pub fn key(&self) -> RankKey {
        RankKey { score: self.score, ts: self.ts, item: self.item }
    }
}

#[derive(Clone, Debug)]
pub struct Query {
    pub id: QueryId,
    pub terms: TermProfile,
    pub k: usize,
    pub ts: Timestamp,
    /// Sorted by [`RankKey::rank_cmp`], at most `k` entries.
    pub result: Vec<ResultEntry>,
}

impl Query {
    pub fn new(id: QueryId, terms: TermProfile, k: usize, ts: Timestamp) -> Self {
        assert!(k > 0, "k must be positive");
        Self { id, terms, k, ts, result: Vec::with_capacity(k) }
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.result.len() >= self.k
    }

    /// Landmark score of the k-th entry, or 0 while the result is not full.
    #[inline]
    pub fn qmin(&self) -> f64 {
        if self.is_full() {
            self.result[self.k - 1].score
        } else {
            0.0
        }
    }

    #[inline]
    pub fn kth(&self) -> Option<&ResultEntry> {
        if self.is_full() {
            self.result.get(self.k - 1)
        } else {
            None
        }
    }

    /// Would an item with this key enter the result right now?
    #[inline]
    pub fn admits(&self, key: &RankKey) -> bool {
        match self.kth() {
            Some(kth) => key.outranks(&kth.key()),
            None => true,
        }
    }

    pub fn position_of(&self, item: ItemId) -> Option<usize> {
        self.result.iter().position(|e| e.item == item)
    }
}

/// Per-item threshold expressed as `step / den`, so that multiples of a
/// fractional threshold land exactly on the value they were derived from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    step: f64,
    den: f64,
}

impl Threshold {
    pub const ZERO: Threshold = Threshold { step: 0.0, den: 1.0 };

    pub fn new(value: f64) -> Self {
        assert!(value >= 0.0 && value.is_finite(), "threshold must be a non-negative real");
        Self { step: value, den: 1.0 }
    }

    /// `max * num / den`.
    pub fn fraction_of(max: f64, num: u32, den: u32) -> Self {
        assert!(den > 0, "zero denominator");
        Self::from_parts(max * f64::from(num), f64::from(den))
    }

    fn from_parts(step: f64, den: f64) -> Self {
        assert!(step >= 0.0 && step.is_finite(), "threshold must be a non-negative real");
        Self { step, den }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.step / self.den
    }

    #[inline]
    pub fn is_zero(&self) -> bool {
        self.step == 0.0
    }

    /// Aggregate dynamic score covered after `refresh` refreshes.
    #[inline]
    pub fn window(&self, refresh: u64) -> f64 {
        (refresh as f64 * self.step) / self.den
    }

    /// Smallest refresh count whose window strictly exceeds `dyn_score`.
    pub fn covering_refresh(&self, dyn_score: f64) -> u64 {
        debug_assert!(!self.is_zero());
        let mut r = (dyn_score / self.value()).floor().max(0.0) as u64 + 1;
        while self.window(r) <= dyn_score {
            r += 1;
        }
        while r > 1 && self.window(r - 1) > dyn_score {
            r -= 1;
        }
        r
    }
}

#[derive(Clone, Debug)]
pub struct Item {
    pub id: ItemId,
    pub terms: TermProfile,
    pub static_quality: f64,
    /// Aggregated event score; never decreases.
    pub dyn_score: f64,
    pub ts: Timestamp,
    pub theta: Threshold,
    pub refresh: u64,
    /// Queries currently publishing this item.
    pub active: FxHashSet<QueryId>,
}

impl Item {
    pub fn new(id: ItemId, terms: TermProfile, static_quality: f64, ts: Timestamp) -> Self {
        Self {
            id,
            terms,
            static_quality,
            dyn_score: 0.0,
            ts,
            theta: Threshold::ZERO,
            refresh: 0,
            active: FxHashSet::default(),
        }
    }

    #[inline]
    pub fn key(&self, score: f64) -> RankKey {
        RankKey { score, ts: self.ts, item: self.id }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub id: u64,
    pub target: ItemId,
    pub score: f64,
    pub ts: Timestamp,
}

/// A stream record after id interning.
#[derive(Clone, Debug)]
pub enum Record {
    Query(Query),
    Item(Item),
    Event(Event),
}

impl Record {
    pub fn ts(&self) -> Timestamp {
        match self {
            Record::Query(q) => q.ts,
            Record::Item(i) => i.ts,
            Record::Event(e) => e.ts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(pairs: &[(u32, f64)]) -> TermProfile {
        TermProfile::new(pairs.iter().map(|&(t, w)| (TermId(t), w)).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(text_score(&profile(&[(0, 1.0)]), &profile(&[(0, 1.0)])), 1.0);
        assert_eq!(text_score(&profile(&[(0, 1.0)]), &profile(&[(1, 1.0)])), 0.0);
        let s = text_score(&profile(&[(0, 1.0), (1, 1.0)]), &profile(&[(0, 1.0)]));
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(text_score(&TermProfile::empty(), &profile(&[(0, 1.0)])), 0.0);
    }

    #[test]
    fn profile_rejects_bad_weights_and_merges_duplicates() {
        assert!(TermProfile::new(vec![(TermId(0), 0.0)]).is_err());
        assert!(TermProfile::new(vec![(TermId(0), -1.0)]).is_err());
        assert!(TermProfile::new(vec![(TermId(0), f64::NAN)]).is_err());
        let p = profile(&[(3, 1.0), (1, 2.0), (3, 1.0)]);
        assert_eq!(p.entries(), &[(TermId(1), 2.0), (TermId(3), 2.0)]);
        assert!((p.norm() - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn total_score_examples() {
        let cfg = ScoreConfig::new(0.3, 0.3, 0.4, f64::INFINITY).unwrap();
        let s = cfg.total(cfg.static_part(0.5, 0.2), 1.5);
        assert!((s - 0.81).abs() < 1e-12);

        let no_feedback = ScoreConfig::new(0.5, 0.5, 0.0, f64::INFINITY).unwrap();
        let sp = no_feedback.static_part(0.7, 0.1);
        assert_eq!(no_feedback.total(sp, 0.0), no_feedback.total(sp, 42.0));

        let only_feedback = ScoreConfig::new(0.0, 0.0, 1.0, f64::INFINITY).unwrap();
        assert_eq!(only_feedback.total(only_feedback.static_part(0.9, 0.9), 2.3), 2.3);
    }

    #[test]
    fn total_score_on_records() {
        let cfg = ScoreConfig::default();
        let q = Query::new(QueryId(0), profile(&[(0, 1.0), (1, 1.0)]), 1, 0.0);
        let i = Item::new(ItemId(0), profile(&[(0, 1.0)]), 0.5, 0.0);
        let expected = 0.3 * std::f64::consts::FRAC_1_SQRT_2 + 0.3 * 0.5 + 0.4 * 2.0;
        assert!((total_score(&q, &i, 2.0, &cfg) - expected).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ScoreConfig::new(0.3, 0.3, 0.3, f64::INFINITY).is_err());
        assert!(ScoreConfig::new(-0.1, 0.6, 0.5, f64::INFINITY).is_err());
        assert!(ScoreConfig::new(0.3, 0.3, 0.4, 0.0).is_err());
        let cfg = ScoreConfig::with_gamma(0.4, 100.0).unwrap();
        assert!((cfg.alpha - 0.3).abs() < 1e-15 && (cfg.beta - 0.3).abs() < 1e-15);
    }

    #[test]
    fn landmark_examples() {
        let no_decay = ScoreConfig::default();
        assert_eq!(to_landmark(0.7, 100.0, &no_decay), 0.7);
        let cfg = ScoreConfig::new(0.3, 0.3, 0.4, 100.0).unwrap();
        assert_eq!(to_landmark(0.5, 50.0, &cfg), 1.0);
        // older item with a higher raw score loses to a fresher one
        let (old, new) = (to_landmark(0.9, 0.0, &cfg), to_landmark(0.5, 60.0, &cfg));
        assert!((old - 0.9).abs() < 1e-12 && (new - 1.1).abs() < 1e-12);
        assert!(new > old);
        assert!(cfg.forward_decayed(0.5, 60.0, 60.0) > cfg.forward_decayed(0.9, 0.0, 60.0));
    }

    #[test]
    fn aggregate_examples() {
        let mut item = Item::new(ItemId(0), profile(&[(0, 1.0)]), 0.0, 0.0);
        let ev = |score| Event { id: 0, target: ItemId(0), score, ts: 1.0 };
        aggregate_event(&mut item, &ev(1.0)).unwrap();
        assert_eq!(item.dyn_score, 1.0);
        item.dyn_score = 2.5;
        aggregate_event(&mut item, &ev(0.0)).unwrap();
        assert_eq!(item.dyn_score, 2.5);
        item.dyn_score = 0.0;
        for _ in 0..13 {
            aggregate_event(&mut item, &ev(1.0)).unwrap();
        }
        assert_eq!(item.dyn_score, 13.0);
        let wrong = Event { id: 1, target: ItemId(9), score: 1.0, ts: 1.0 };
        assert!(aggregate_event(&mut item, &wrong).is_err());
        assert!(aggregate_event(&mut item, &ev(1.5)).is_err());
    }

    #[test]
    fn rank_key_tie_break() {
        let a = RankKey { score: 1.0, ts: 5.0, item: ItemId(3) };
        let newer = RankKey { score: 1.0, ts: 6.0, item: ItemId(9) };
        let smaller_id = RankKey { score: 1.0, ts: 5.0, item: ItemId(1) };
        assert!(newer.outranks(&a));
        assert!(smaller_id.outranks(&a));
        assert!(!a.outranks(&a));
        let higher = RankKey { score: 1.1, ts: 0.0, item: ItemId(99) };
        assert!(higher.outranks(&newer));
    }

    #[test]
    fn threshold_windows() {
        let t = Threshold::new(0.5);
        assert_eq!(t.covering_refresh(1.2), 3);
        assert!(t.window(3) > 1.2);
        let third = Threshold::fraction_of(7.0, 1, 3);
        assert_eq!(third.window(3), 7.0);
        assert_eq!(third.covering_refresh(7.0), 4);
        assert_eq!(third.covering_refresh(6.9), 3);
    }

    #[test]
    fn qmin_tracks_kth_entry() {
        let mut q = Query::new(QueryId(0), profile(&[(0, 1.0)]), 2, 0.0);
        let entry = |item, score| ResultEntry { item: ItemId(item), score, ts: 0.0, base: 0.0 };
        q.result.push(entry(0, 0.9));
        assert_eq!(q.qmin(), 0.0);
        assert!(q.kth().is_none());
        q.result.push(entry(1, 0.4));
        assert_eq!(q.qmin(), 0.4);
        assert!(q.admits(&RankKey { score: 0.5, ts: 0.0, item: ItemId(2) }));
        assert!(!q.admits(&RankKey { score: 0.3, ts: 0.0, item: ItemId(2) }));
    }

    fn arb_profile() -> impl Strategy<Value = TermProfile> {
        proptest::collection::vec((0u32..12, 0.01f64..5.0), 0..6)
            .prop_map(|pairs| TermProfile::new(pairs.into_iter().map(|(t, w)| (TermId(t), w)).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn text_score_symmetric_and_bounded(a in arb_profile(), b in arb_profile()) {
            let ab = text_score(&a, &b);
            prop_assert_eq!(ab, text_score(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn landmark_order_matches_forward_decay(
            ra in 0.0f64..10.0, rb in 0.0f64..10.0,
            ta in 0.0f64..1000.0, tb in 0.0f64..1000.0,
            horizon in 1.0f64..5000.0, lag in 0.0f64..1000.0,
        ) {
            let cfg = ScoreConfig::new(0.3, 0.3, 0.4, horizon).unwrap();
            let now = ta.max(tb) + lag;
            let landmark = (cfg.landmark(ra, ta) - cfg.landmark(rb, tb)).signum();
            let forward = (cfg.forward_decayed(ra, ta, now) - cfg.forward_decayed(rb, tb, now)).signum();
            // both differences are the same real number up to rounding
            let gap = (cfg.landmark(ra, ta) - cfg.landmark(rb, tb)).abs();
            prop_assume!(gap > 1e-9);
            prop_assert_eq!(landmark, forward);
        }

        #[test]
        fn total_score_monotone_in_dyn(sp in 0.0f64..1.0, d1 in 0.0f64..50.0, d2 in 0.0f64..50.0, gamma in 0.0f64..1.0) {
            let rest = (1.0 - gamma) / 2.0;
            let cfg = ScoreConfig::new(rest, rest, gamma, f64::INFINITY).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(cfg.total(sp, lo) <= cfg.total(sp, hi));
            if gamma > 0.0 && hi - lo > 1e-6 {
                prop_assert!(cfg.total(sp, lo) < cfg.total(sp, hi));
            }
        }

        #[test]
        fn covering_refresh_is_minimal(theta in 0.01f64..10.0, dyn_score in 0.0f64..100.0) {
            let t = Threshold::new(theta);
            let r = t.covering_refresh(dyn_score);
            prop_assert!(t.window(r) > dyn_score);
            prop_assert!(r == 1 || t.window(r - 1) <= dyn_score);
        }
    }
}
