use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rtopk_bench::workload;
use rtopk_core::stream::theta_max;
use rtopk_core::{Engine, EngineOptions, IndexVariant, Mode, ScoreConfig, ThetaStrategy, WorkloadParams};

fn replay(c: &mut Criterion, name: &str, params: WorkloadParams) {
    let records = workload(&params);
    let maxima = theta_max(&records);
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    let mut modes = vec![Mode::Naive];
    modes.extend(IndexVariant::ALL.map(Mode::Rrts));
    for mode in modes {
        let mut opts = EngineOptions::new(mode, ScoreConfig::default(), ThetaStrategy::ExactFraction { num: 1, den: 2 });
        opts.theta_max = Some(maxima.clone());
        group.bench_function(mode.to_string(), |b| {
            b.iter_batched(
                || records.clone(),
                |recs| {
                    let mut engine = Engine::new(opts.clone()).unwrap();
                    for r in recs {
                        engine.process(r).unwrap();
                    }
                    engine.metrics().result_updates
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn ds1(c: &mut Criterion) {
    replay(c, "ds1", WorkloadParams::ds1(2_000, 10_000, 1));
}

fn ds10(c: &mut Criterion) {
    replay(c, "ds10", WorkloadParams::ds10(2_000, 1_000, 1));
}

criterion_group!(benches, ds1, ds10);
criterion_main!(benches);
