use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lsapc::fused_lasso::tv_prox;
use lsapc::rand_kernels::BetaSampler;
use lsapc::vb::VbSolver;
use lsapc::{LsapcConfig, RngHandle};
use lsapc_bench::fixture;
use nalgebra::DVector;

fn bench_tv_prox(c: &mut Criterion) {
    let mut group = c.benchmark_group("tv_prox");
    for m in [100, 1_000, 10_000] {
        let mut rng = RngHandle::new(1);
        let z: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 3.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(m), &z, |b, z| b.iter(|| tv_prox(black_box(z), 1.5)));
    }
    group.finish();
}

fn bench_beta_draw(c: &mut Criterion) {
    let mut group = c.benchmark_group("beta_draw");
    for (n, p) in [(40, 100), (200, 100), (300, 50)] {
        let data = fixture(n, p, 2);
        let sampler = BetaSampler::new(&data);
        let l = DVector::from_element(p - 1, -0.9);
        let tau = DVector::from_element(p, 1.0);
        let mut rng = RngHandle::new(3);
        group.bench_function(BenchmarkId::from_parameter(format!("n{n}_p{p}")), |b| {
            b.iter(|| {
                let cond = sampler.conditional(1.0, &l, &tau).unwrap();
                black_box(cond.draw(&mut rng))
            })
        });
    }
    group.finish();
}

fn bench_vb_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("vb_step");
    for (n, p) in [(40, 100), (300, 50)] {
        let data = fixture(n, p, 4);
        let cfg = LsapcConfig::default();
        let solver = VbSolver::new(&data, &cfg).unwrap();
        let q = solver.initial_posterior();
        group.bench_function(BenchmarkId::from_parameter(format!("n{n}_p{p}")), |b| {
            b.iter(|| black_box(solver.step(&q, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_tv_prox, bench_beta_draw, bench_vb_step);
criterion_main!(benches);
