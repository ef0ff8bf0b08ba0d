use byzwalk::config::{AdversaryConfig, ExperimentConfig};
use byzwalk::experiments::{run, Experiment};
use byzwalk::sweep::{run_seeds, run_seeds_sequential, seed_range};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn walk_cfg(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n: 64,
        byzantine: 2,
        seed,
        walk_tokens: Some(256),
        adversary: AdversaryConfig::named("flooder"),
        ..Default::default()
    }
}

fn one(seed: u64) -> f64 {
    let out = run(Experiment::Walk, &walk_cfg(seed)).expect("walk runs");
    out.metrics.get("good_fraction").unwrap_or(0.0)
}

fn seed_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for count in [4usize, 16] {
        let seeds = seed_range(1, count);
        group.bench_with_input(BenchmarkId::new("sequential", count), &seeds, |b, s| b.iter(|| run_seeds_sequential(s, one)));
        group.bench_with_input(BenchmarkId::new("parallel", count), &seeds, |b, s| b.iter(|| run_seeds(s, one)));
    }
    group.finish();
}

criterion_group!(benches, seed_sweep);
criterion_main!(benches);
