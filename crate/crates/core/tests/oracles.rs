//! Closed-form and independently integrated reference values.

use std::f64::consts::LN_2;

use approx::assert_abs_diff_eq;
use vparisi_core::parisi::{eval_parisi, eval_phi, Smoothing};
use vparisi_core::rpc::simulate_phi;
use vparisi_core::system::exact_free_energy;
use vparisi_core::{EvalSpec, GramMatrix, Lambda, MixedModel, Path, SpinPrior};

/// `E f(Z)` by a midpoint rule on `[-12, 12]`.
fn gaussian_mean(f: impl Fn(f64) -> f64) -> f64 {
    let n = 200_000;
    let h = 24.0 / n as f64;
    (0..n)
        .map(|i| {
            let z = -12.0 + (i as f64 + 0.5) * h;
            f(z) * (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * h
        / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn sk_at_top_level_is_log_two_plus_beta_squared() {
    let model = MixedModel::sk(1, 0.5).unwrap();
    let path = Path::single_level(GramMatrix::identity(1), 1.0).unwrap();
    let v = eval_phi(
        &model,
        &SpinPrior::ising_counting(),
        &Lambda::scalar(0.0),
        &path,
        &EvalSpec::quadrature(16),
    )
    .unwrap();
    assert_abs_diff_eq!(v.value, LN_2 + 0.25, epsilon = 1e-10);
}

#[test]
fn parisi_value_for_the_bundled_sk_config() {
    let model = MixedModel::sk(1, 0.5).unwrap();
    let d = GramMatrix::identity(1);
    let path = Path::single_level(d.clone(), 1.0).unwrap();
    let p = eval_parisi(
        &model,
        &SpinPrior::ising_counting(),
        &Lambda::scalar(0.0),
        &d,
        &path,
        &EvalSpec::quadrature(16),
    )
    .unwrap();
    assert_abs_diff_eq!(p.value, 0.818_147_180_559_944, epsilon = 1e-12);
    assert_abs_diff_eq!(p.theta_term, 0.125, epsilon = 1e-14);
}

#[test]
fn one_level_sk_matches_direct_integration() {
    for (beta, x0, q) in [(0.5, 0.5, 1.0), (0.8, 0.3, 0.6), (0.3, 0.9, 1.0)] {
        let model = MixedModel::sk(1, beta).unwrap();
        let path = Path::new(vec![x0], vec![GramMatrix::diagonal(&[q]).unwrap()]).unwrap();
        let v = eval_phi(
            &model,
            &SpinPrior::ising_counting(),
            &Lambda::scalar(0.0),
            &path,
            &EvalSpec::quadrature(40),
        )
        .unwrap();
        let s = (2.0 * beta * beta * q).sqrt();
        let direct = gaussian_mean(|z| (2.0 * (s * z).cosh()).powf(x0)).ln() / x0;
        assert_abs_diff_eq!(v.value, direct, epsilon = 1e-9);
    }
}

#[test]
fn lambda_shifts_the_ising_value() {
    // σ² = 1 on the Ising support, so λ only adds itself.
    let model = MixedModel::sk(1, 0.6).unwrap();
    let path = Path::single_level(GramMatrix::identity(1), 0.4).unwrap();
    let spec = EvalSpec::quadrature(16);
    let prior = SpinPrior::ising();
    let a = eval_phi(&model, &prior, &Lambda::scalar(0.0), &path, &spec).unwrap();
    let b = eval_phi(&model, &prior, &Lambda::scalar(0.7), &path, &spec).unwrap();
    assert_abs_diff_eq!(b.value - a.value, 0.7, epsilon = 1e-12);
}

#[test]
fn smoothing_adds_half_delta_lambda_squared() {
    let model = MixedModel::new(2, [(2, vec![0.4, 0.3])]).unwrap();
    let prior = SpinPrior::hypercube(2).unwrap();
    let path = Path::single_level(GramMatrix::identity(2), 0.5).unwrap();
    let lambda = Lambda::from_values(2, vec![0.2, -0.1, 0.3]).unwrap();
    let base = eval_phi(&model, &prior, &lambda, &path, &EvalSpec::quadrature(12)).unwrap();
    let spec = EvalSpec {
        smoothing: Some(Smoothing {
            delta: 0.5,
            nodes: 20,
        }),
        ..EvalSpec::quadrature(12)
    };
    let smooth = eval_phi(&model, &prior, &lambda, &path, &spec).unwrap();
    assert_abs_diff_eq!(
        smooth.value - base.value,
        0.25 * lambda.sum_squares(),
        epsilon = 1e-9
    );
}

#[test]
fn monte_carlo_backend_agrees_with_quadrature() {
    let model = MixedModel::sk(1, 0.7).unwrap();
    let path = Path::new(
        vec![0.3, 0.8],
        vec![
            GramMatrix::diagonal(&[0.4]).unwrap(),
            GramMatrix::identity(1),
        ],
    )
    .unwrap();
    let prior = SpinPrior::ising();
    let l = Lambda::scalar(0.0);
    let q = eval_phi(&model, &prior, &l, &path, &EvalSpec::quadrature(24)).unwrap();
    let mc = eval_phi(&model, &prior, &l, &path, &EvalSpec::monte_carlo(400, 11)).unwrap();
    assert!((q.value - mc.value).abs() <= 4.0 * mc.std_error + 1e-3);
}

#[test]
fn cascade_simulation_agrees_with_recursion() {
    let model = MixedModel::sk(1, 0.5).unwrap();
    let path = Path::single_level(GramMatrix::identity(1), 0.5).unwrap();
    let prior = SpinPrior::ising_counting();
    let l = Lambda::scalar(0.0);
    let q = eval_phi(&model, &prior, &l, &path, &EvalSpec::quadrature(24)).unwrap();
    let sim = simulate_phi(&model, &prior, &l, &path, 256, 100, 3).unwrap();
    assert!((q.value - sim.value).abs() <= 3.0 * sim.std_error + 5e-3);
}

#[test]
fn free_spins_have_entropy_only() {
    let fe = exact_free_energy(
        &MixedModel::free(1).unwrap(),
        &SpinPrior::ising_counting(),
        5,
        3,
        0,
    )
    .unwrap();
    assert_abs_diff_eq!(fe.value, LN_2, epsilon = 1e-12);
}
