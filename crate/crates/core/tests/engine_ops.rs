use rtopk_core::candidate::IndexVariant;
use rtopk_core::engine::{Delta, Engine, EngineOptions, Mode};
use rtopk_core::model::{ItemId, ScoreConfig};
use rtopk_core::oracle::OracleState;
use rtopk_core::planner::ThetaStrategy;
use rtopk_core::stream::{Interner, StreamRecord};

fn query(id: &str, ts: f64, terms: &[&str], k: usize) -> StreamRecord {
    StreamRecord::Query { id: id.into(), ts, terms: terms.iter().map(|t| (t.to_string(), 1.0)).collect(), k }
}

fn item(id: &str, ts: f64, terms: &[&str], static_quality: f64) -> StreamRecord {
    StreamRecord::Item { id: id.into(), ts, terms: terms.iter().map(|t| (t.to_string(), 1.0)).collect(), static_quality }
}

fn event(id: &str, ts: f64, target: &str, score: f64) -> StreamRecord {
    StreamRecord::Event { id: id.into(), ts, target: target.into(), score }
}

fn modes() -> Vec<(Mode, ThetaStrategy)> {
    let mut out = vec![(Mode::Naive, ThetaStrategy::Zero)];
    for v in IndexVariant::ALL {
        out.push((Mode::Rrts(v), ThetaStrategy::Global(0.5)));
    }
    out
}

/// Feeds the stream and returns the deltas of every record.
fn replay(mode: Mode, theta: ThetaStrategy, stream: &[StreamRecord]) -> (Engine, Interner, Vec<Vec<Delta>>) {
    let mut names = Interner::default();
    let mut engine = Engine::new(EngineOptions::new(mode, ScoreConfig::default(), theta)).unwrap();
    let deltas = stream
        .iter()
        .map(|r| {
            let rec = names.intern(r).unwrap();
            engine.process(rec).unwrap().to_vec()
        })
        .collect();
    (engine, names, deltas)
}

fn result_items(engine: &Engine, q: usize) -> Vec<ItemId> {
    engine.queries()[q].result.iter().map(|e| e.item).collect()
}

#[test]
fn query_on_empty_state_has_empty_result() {
    for (mode, theta) in modes() {
        let (engine, _, _) = replay(mode, theta, &[query("q", 0.0, &["a"], 1)]);
        assert!(engine.queries()[0].result.is_empty());
        assert_eq!(engine.queries()[0].qmin(), 0.0);
    }
}

#[test]
fn underfilled_result_keeps_zero_qmin() {
    for (mode, theta) in modes() {
        let stream = [item("i", 1.0, &["a"], 0.5), query("q", 2.0, &["a"], 2)];
        let (engine, _, _) = replay(mode, theta, &stream);
        assert_eq!(engine.queries()[0].result.len(), 1);
        assert_eq!(engine.queries()[0].qmin(), 0.0);
    }
}

#[test]
fn late_query_equals_full_scan() {
    let mut stream: Vec<StreamRecord> = (0..30)
        .map(|j| item(&format!("i{j}"), j as f64, &[["a", "b", "c"][j % 3], "d"], (j * 7 % 11) as f64 / 10.0))
        .collect();
    stream.push(query("q", 40.0, &["a", "d"], 3));
    for (mode, theta) in modes() {
        let (engine, _, _) = replay(mode, theta, &stream);
        let mut oracle = OracleState::new(ScoreConfig::default());
        let mut fresh = Interner::default();
        for r in &stream {
            oracle.step(&fresh.intern(r).unwrap()).unwrap();
        }
        let expected: Vec<ItemId> = oracle.result(engine.queries()[0].id).iter().map(|e| e.item).collect();
        assert_eq!(result_items(&engine, 0), expected);
        assert_eq!(expected.len(), 3);
    }
}

#[test]
fn irrelevant_item_produces_no_delta() {
    for (mode, theta) in modes() {
        let (engine, _, deltas) = replay(mode, theta, &[query("q", 0.0, &["a"], 1), item("i", 1.0, &["b"], 0.9)]);
        assert!(deltas[1].is_empty());
        assert_eq!(engine.items().len(), 1);
    }
}

#[test]
fn better_item_evicts_the_kth() {
    for (mode, theta) in modes() {
        let stream = [
            query("q1", 0.0, &["a"], 1),
            query("q2", 0.0, &["b"], 1),
            item("low", 1.0, &["a"], 0.1),
            item("other", 2.0, &["b"], 0.9),
            item("high", 3.0, &["a"], 0.8),
        ];
        let (_, names, deltas) = replay(mode, theta, &stream);
        assert_eq!(deltas[4].len(), 1);
        let d = deltas[4][0];
        assert_eq!(d.inserted, names.item_id("high").unwrap());
        assert_eq!(d.evicted, names.item_id("low"));
    }
}

#[test]
fn zero_score_event_is_a_no_op() {
    for (mode, theta) in modes() {
        let stream = [query("q", 0.0, &["a"], 1), item("x", 1.0, &["a"], 0.9), item("y", 2.0, &["a"], 0.1), event("e", 3.0, "y", 0.0)];
        let (engine, _, deltas) = replay(mode, theta, &stream);
        assert!(deltas[3].is_empty());
        assert_eq!(engine.items()[1].dyn_score, 0.0);
    }
}

#[test]
fn refresh_window_covers_the_aggregate() {
    let stream = [
        query("q", 0.0, &["a"], 1),
        item("x", 1.0, &["a"], 0.9),
        item("y", 2.0, &["a"], 0.1),
        event("e1", 3.0, "y", 0.6),
        event("e2", 4.0, "y", 0.6),
    ];
    for v in IndexVariant::ALL {
        let (engine, _, _) = replay(Mode::Rrts(v), ThetaStrategy::Global(0.5), &stream);
        let y = &engine.items()[1];
        assert_eq!(y.dyn_score, 1.2);
        assert_eq!(y.refresh, 3);
        assert!(y.theta.window(y.refresh) > y.dyn_score);
    }
}

#[test]
fn evicted_item_returns_after_events() {
    // b leads, a overtakes it through feedback, then b wins it back.
    let stream = [
        query("q", 0.0, &["t"], 1),
        item("a", 1.0, &["t"], 0.2),
        item("b", 2.0, &["t"], 0.6),
        event("e1", 3.0, "a", 1.0),
        event("e2", 4.0, "b", 0.5),
        event("e3", 5.0, "b", 0.5),
    ];
    let mut all = Vec::new();
    for (mode, theta) in modes() {
        let (engine, names, deltas) = replay(mode, theta, &stream);
        let (a, b) = (names.item_id("a").unwrap(), names.item_id("b").unwrap());
        let flat: Vec<(usize, ItemId, Option<ItemId>)> =
            deltas.iter().enumerate().flat_map(|(n, ds)| ds.iter().map(move |d| (n, d.inserted, d.evicted))).collect();
        assert_eq!(flat, vec![(1, a, None), (2, b, Some(a)), (3, a, Some(b)), (5, b, Some(a))], "{mode}");
        assert_eq!(result_items(&engine, 0), vec![b]);
        assert!(engine.check_invariants().is_ok());
        all.push(flat);
    }
    assert!(all.windows(2).all(|w| w[0] == w[1]));
}
