use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ergodic_lab::sim::{simulate_with, Scheme, SimConfig};
use ergodic_lab::{catalog, domain};

fn bench_simulation(c: &mut Criterion) {
    let model = catalog::cubic_sine();
    let ball = domain::ball(&[0.0], 1.0).unwrap();
    let mut group = c.benchmark_group("simulate");
    for &n_paths in &[64usize, 512] {
        let cfg = SimConfig::new(1e-3, 1.0, n_paths, 7, Scheme::Projected);
        group.bench_with_input(
            BenchmarkId::new("parallel", n_paths),
            &cfg,
            |b, cfg| {
                b.iter(|| simulate_with(&model, Some(&ball), &[0.1], cfg, false).unwrap())
            },
        );
        group.bench_with_input(
            BenchmarkId::new("sequential", n_paths),
            &cfg,
            |b, cfg| {
                b.iter(|| simulate_with(&model, Some(&ball), &[0.1], cfg, true).unwrap())
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_simulation);
criterion_main!(benches);
