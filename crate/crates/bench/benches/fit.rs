use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tvcure::{fit, FitConfig, SimScenario};
use tvcure_bench::scenario_table;

fn full_fit(c: &mut Criterion) {
    let table = scenario_table(500);
    let spec = SimScenario::model_spec();
    let cfg = FitConfig::default();
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("scenario2_n500", |b| b.iter(|| fit(black_box(&table), &spec, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, full_fit);
criterion_main!(benches);
