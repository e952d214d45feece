//! Sinkhorn solver benchmarks: plain vs log-domain across sizes and gammas.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use motor_bench::{random_cost, rng};
use motor_core::ot::{sinkhorn, uniform_marginal, SinkhornParams};
use motor_core::types::SinkhornMode;
use std::hint::black_box;

fn bench_sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    for &n in &[2usize, 4, 8, 16] {
        let mut r = rng(99);
        let cost = random_cost(&mut r, n, n);
        let u = uniform_marginal(n);
        for (label, mode, gamma) in [
            ("plain_gamma1", SinkhornMode::Plain, 1.0),
            ("plain_gamma0.1", SinkhornMode::Plain, 0.1),
            ("log_gamma0.1", SinkhornMode::LogDomain, 0.1),
            ("log_gamma0.01", SinkhornMode::LogDomain, 0.01),
        ] {
            let params = SinkhornParams::new(gamma)
                .with_mode(mode)
                .with_tol(1e-6)
                .with_max_iters(5_000);
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| sinkhorn(black_box(&cost), &u, &u, &params).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_sinkhorn);
criterion_main!(benches);
