use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use icufunnel::analysis::{robustness_probe, sweep_eps_minus_with, ProbeConfig};
use icufunnel::constants::{derive_constants, DEFAULT_DWELL_DELTA};
use icufunnel::controller::find_feasible_eps;
use icufunnel::{Execution, Scenario, SimConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn robustness(c: &mut Criterion) {
    let sc = Scenario::example_city();
    let dc = derive_constants(&sc, DEFAULT_DWELL_DELTA).unwrap();
    let eps = find_feasible_eps(&sc, &dc, 10_000).unwrap().distances();
    let mut group = c.benchmark_group("robustness_probe");
    for samples in [256, 4096] {
        for (name, execution) in MODES {
            let cfg = ProbeConfig {
                samples,
                execution,
                ..ProbeConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(name, samples), &cfg, |b, cfg| {
                b.iter(|| robustness_probe(black_box(&sc), eps, 1e-3, cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let sc = Scenario::example_city();
    let cfg = SimConfig::default();
    let list: Vec<f64> = (1..=16).map(|i| 2.0 * i as f64).collect();
    let mut group = c.benchmark_group("sweep_eps_minus");
    group.sample_size(10);
    for (name, execution) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| sweep_eps_minus_with(execution, black_box(&sc), 10.0, &list, &cfg))
        });
    }
    group.finish();
}

criterion_group!(benches, robustness, sweep);
criterion_main!(benches);
