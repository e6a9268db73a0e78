use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vparisi_core::parisi::{eval_phi, eval_phi_with_gradient, theta_term};
use vparisi_core::rpc::simulate_phi;
use vparisi_core::system::exact_free_energy;
use vparisi_core::{EvalSpec, GramMatrix, Lambda, MixedModel, Path, SpinPrior};

fn two_level(kappa: usize) -> Path {
    let d = GramMatrix::identity(kappa);
    Path::replica_symmetric(&d, 0.4).unwrap()
}

fn model(kappa: usize) -> MixedModel {
    MixedModel::new(kappa, [(2, vec![0.5; kappa]), (4, vec![0.2; kappa])]).unwrap()
}

fn phi(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval_phi");
    for (kappa, nodes) in [(1, 16), (1, 32), (2, 8), (2, 12)] {
        let prior = if kappa == 1 {
            SpinPrior::ising()
        } else {
            SpinPrior::hypercube(kappa).unwrap()
        };
        let m = model(kappa);
        let path = two_level(kappa);
        let lambda = Lambda::zeros(kappa);
        let spec = EvalSpec::quadrature(nodes);
        group.bench_with_input(
            BenchmarkId::new(format!("kappa{kappa}_r2"), nodes),
            &spec,
            |b, spec| b.iter(|| eval_phi(&m, &prior, &lambda, &path, spec).unwrap().value),
        );
        group.bench_with_input(
            BenchmarkId::new(format!("kappa{kappa}_r2_gradient"), nodes),
            &spec,
            |b, spec| {
                b.iter(|| {
                    eval_phi_with_gradient(&m, &prior, &lambda, &path, spec)
                        .unwrap()
                        .value
                })
            },
        );
    }
    group.finish();
}

fn theta(c: &mut Criterion) {
    let m = model(3);
    let d = GramMatrix::identity(3);
    let path = Path::new(
        vec![0.1, 0.3, 0.6, 0.9],
        [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|q| GramMatrix::new(d.as_matrix() * *q).unwrap())
            .collect(),
    )
    .unwrap();
    c.bench_function("theta_term_kappa3_r4", |b| {
        b.iter(|| theta_term(black_box(&m), &path).unwrap())
    });
}

fn cascade(c: &mut Criterion) {
    let m = MixedModel::sk(1, 0.5).unwrap();
    let path = Path::single_level(GramMatrix::identity(1), 0.5).unwrap();
    let prior = SpinPrior::ising_counting();
    let lambda = Lambda::scalar(0.0);
    let mut group = c.benchmark_group("simulate_phi");
    group.sample_size(10);
    for fanout in [128, 256] {
        group.bench_with_input(BenchmarkId::from_parameter(fanout), &fanout, |b, &f| {
            b.iter(|| {
                simulate_phi(&m, &prior, &lambda, &path, f, 20, 1)
                    .unwrap()
                    .value
            })
        });
    }
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let m = MixedModel::sk(1, 0.3).unwrap();
    let prior = SpinPrior::ising_counting();
    let mut group = c.benchmark_group("exact_free_energy");
    group.sample_size(10);
    for n in [8, 12] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| exact_free_energy(&m, &prior, n, 4, 1).unwrap().value)
        });
    }
    group.finish();
}

criterion_group!(benches, phi, theta, cascade, enumeration);
criterion_main!(benches);
