use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gsdm_bench::{network, random_graph, random_symmetric};
use gsdm_core::graphs::eig_decompose;
use gsdm_core::sampling::{generate_batch, EigenBank, Model};
use gsdm_core::scorenet::{full_outputs, spectral_outputs, NetworkScore};
use gsdm_core::{SampleConfig, Solver, Variant};

fn eigensolver(c: &mut Criterion) {
    let mut group = c.benchmark_group("jacobi_eig");
    for n in [20, 50, 100] {
        let a = random_symmetric(n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| eig_decompose(black_box(a)).unwrap()));
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_forward");
    for n in [20, 50, 100] {
        let g = random_graph(n, 0.1, 3);
        let s = eig_decompose(&g.a).unwrap();
        let spectral = network(Variant::Spectral, g.d(), 1);
        let full = network(Variant::FullRank, g.d(), 1);
        group.bench_with_input(BenchmarkId::new("spectral", n), &n, |b, _| {
            b.iter(|| spectral_outputs(&spectral, black_box(&g.x), black_box(&s.lambda), &s.u, 0.5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fullrank", n), &n, |b, _| {
            b.iter(|| full_outputs(&full, black_box(&g.x), black_box(&g.a), 0.5).unwrap())
        });
    }
    group.finish();
}

/// One graph, ten reverse steps, per variant.
fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_10_steps");
    group.sample_size(10);
    for n in [50, 100] {
        let bank_graphs = vec![random_graph(n, 0.1, 5)];
        let bank = EigenBank::new(&bank_graphs).unwrap();
        let d = bank.feature_dim();
        for (variant, solver) in [(Variant::Spectral, Solver::Pc), (Variant::FullRank, Solver::FullrankPc)] {
            let params = network(variant, d, 2);
            let cfg = SampleConfig {
                steps: 10,
                solver,
                ..SampleConfig::default()
            };
            let net = NetworkScore::new(&params, cfg.sched_x, cfg.sched_structure);
            let model = match variant {
                Variant::Spectral => Model::Spectral(&net),
                Variant::FullRank => Model::FullRank(&net),
            };
            group.bench_with_input(BenchmarkId::new(variant.to_string(), n), &n, |b, _| {
                b.iter(|| generate_batch(model, &bank, 1, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, eigensolver, forward, sampling);
criterion_main!(benches);
