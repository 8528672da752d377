//! Rayon pool vs a single-thread pool on the hot data-parallel paths.
//! Build with `--no-default-features` to get the plain-iterator fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gpattack_core::data::{generate_two_moons, uniform_points};
use gpattack_core::gp::fit_classification_laplace;
use gpattack_core::membership::{ForestParams, RandomForest};
use gpattack_core::KernelSpec;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", single), ("parallel", all)]
}

fn predict_batch(c: &mut Criterion) {
    let data = generate_two_moons(300, 0.2, 0).unwrap();
    let gp = fit_classification_laplace(&KernelSpec::rbf(0.5, 1.0).unwrap(), &data, 50, 1e-8).unwrap();
    let probes = uniform_points(&data.bounds(), 4000, 1);
    let mut group = c.benchmark_group("predict_batch_4000");
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| pool.install(|| gp.predict_batch(&probes).unwrap()))
        });
    }
    group.finish();
}

fn forest_fit(c: &mut Criterion) {
    let data = generate_two_moons(400, 0.3, 2).unwrap();
    let rows = data.features().to_vec();
    let labels: Vec<bool> = data.labels().iter().map(|&y| y > 0.0).collect();
    let params = ForestParams { trees: 64, max_depth: 8, seed: 0 };
    let mut group = c.benchmark_group("forest_fit_64");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| pool.install(|| RandomForest::fit(&rows, &labels, params).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, predict_batch, forest_fit);
criterion_main!(benches);
