use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, psd_repair, Mat, PSD_TOL};
use crate::mixing::MixedModel;
use crate::prior::SpinPrior;
use crate::quadrature::{GaussianGrid, StandardNormalRule};
use crate::rng::{stream, tag, Rng};
use crate::stats::sample_std;

use super::{pair_count, pairs, Backend, EvalSpec, Lambda, Path, Smoothing};

/// Below this `x_j` the level is a plain expectation.
pub const X_ZERO: f64 = 1e-8;

/// Directions of an increment with eigenvalue at or below this (relative)
/// level carry no Gaussian mass.
const RANK_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiValue {
    pub value: f64,
    pub std_error: f64,
    /// `∂Φ/∂λ_{kk'}` in [`Lambda`] storage order, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
    /// Innermost integrand evaluations.
    pub evaluations: u64,
}

/// `ξ'(γ_j) - ξ'(γ_{j-1})` for `j = 1..r`, with round-off negative
/// eigenvalues clipped.
pub fn increments(model: &MixedModel, path: &Path) -> Result<Vec<Mat>> {
    if model.kappa() != path.kappa() {
        return Err(Error::shape(model.kappa(), path.kappa()));
    }
    let mut prev = model.xi_prime_hadamard(path.gamma(0))?;
    let mut out = Vec::with_capacity(path.r());
    for j in 1..=path.r() {
        let cur = model.xi_prime_hadamard(path.gamma(j))?;
        let inc = psd_repair(&(&cur - &prev), PSD_TOL).map_err(|e| match e {
            Error::NotPsd { min_eigenvalue } => Error::InvalidPath(format!(
                "increment {j} is not PSD (min eigenvalue {min_eigenvalue:e})"
            )),
            other => other,
        })?;
        out.push(inc);
        prev = cur;
    }
    Ok(out)
}

/// `log ∫ exp(⟨σ, z⟩ + Σ_{k≤k'} λ_{kk'} σ(k)σ(k')) dμ(σ)`.
pub fn eval_inner(prior: &SpinPrior, lambda: &Lambda, z_sum: &[f64]) -> Result<f64> {
    if prior.kappa() != lambda.kappa() {
        return Err(Error::shape(prior.kappa(), lambda.kappa()));
    }
    if z_sum.len() != prior.kappa() {
        return Err(Error::shape(prior.kappa(), z_sum.len()));
    }
    Ok(Inner::new(prior, lambda, None)?.value(z_sum))
}

/// The innermost integrand as a finite list of weighted atoms. Smoothing
/// expands each prior atom into one virtual atom per Gauss–Hermite node of
/// the auxiliary Gaussian.
pub(crate) struct Inner {
    kappa: usize,
    npairs: usize,
    points: Vec<f64>,
    features: Vec<f64>,
    offsets: Vec<f64>,
    log_mass: f64,
}

impl Inner {
    pub(crate) fn new(
        prior: &SpinPrior,
        lambda: &Lambda,
        smoothing: Option<Smoothing>,
    ) -> Result<Self> {
        let kappa = prior.kappa();
        let npairs = pair_count(kappa);
        let (shifts, shift_weights) = match smoothing {
            None => (vec![0.0; npairs], vec![1.0]),
            Some(s) => {
                let rule = StandardNormalRule::new(s.nodes)?;
                let factor = Mat::identity(npairs, npairs) * s.delta.sqrt();
                let size = GaussianGrid::size(rule.len(), npairs).unwrap_or(usize::MAX);
                if size > 1 << 20 {
                    return Err(Error::Budget(format!(
                        "smoothing grid of {} nodes in {npairs} dimensions is too large",
                        s.nodes
                    )));
                }
                let grid = GaussianGrid::new(&factor, &rule)?;
                (grid.points, grid.weights)
            }
        };
        let n = prior.len() * shift_weights.len();
        let mut points = Vec::with_capacity(n * kappa);
        let mut features = Vec::with_capacity(n * npairs);
        let mut offsets = Vec::with_capacity(n);
        for atom in prior.atoms() {
            let base: Vec<f64> = pairs(kappa)
                .map(|(a, b)| atom.point[a] * atom.point[b])
                .collect();
            for (g, &wg) in shift_weights.iter().enumerate() {
                let f: Vec<f64> = base
                    .iter()
                    .zip(&shifts[g * npairs..(g + 1) * npairs])
                    .map(|(b, s)| b + s)
                    .collect();
                let lin: f64 = f.iter().zip(lambda.values()).map(|(a, b)| a * b).sum();
                points.extend_from_slice(&atom.point);
                offsets.push(atom.weight.ln() + wg.ln() + lin);
                features.extend(f);
            }
        }
        Ok(Inner {
            kappa,
            npairs,
            points,
            features,
            offsets,
            log_mass: prior.log_mass(),
        })
    }

    fn exponent(&self, a: usize, z: &[f64]) -> f64 {
        let p = &self.points[a * self.kappa..(a + 1) * self.kappa];
        self.offsets[a] + p.iter().zip(z).map(|(s, t)| s * t).sum::<f64>()
    }

    pub(crate) fn value(&self, z: &[f64]) -> f64 {
        let n = self.offsets.len();
        let max = (0..n)
            .map(|a| self.exponent(a, z))
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n).map(|a| (self.exponent(a, z) - max).exp()).sum();
        self.log_mass + max + sum.ln()
    }

    /// Value and Gibbs average of the `λ`-features, written into `grad`.
    pub(crate) fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.offsets.len();
        let max = (0..n)
            .map(|a| self.exponent(a, z))
            .fold(f64::NEG_INFINITY, f64::max);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sum = 0.0;
        for a in 0..n {
            let w = (self.exponent(a, z) - max).exp();
            sum += w;
            let f = &self.features[a * self.npairs..(a + 1) * self.npairs];
            for (g, v) in grad.iter_mut().zip(f) {
                *g += w * v;
            }
        }
        grad.iter_mut().for_each(|g| *g /= sum);
        self.log_mass + max + sum.ln()
    }
}

fn check_inputs(model: &MixedModel, prior: &SpinPrior, lambda: &Lambda, path: &Path) -> Result<()> {
    let kappa = model.kappa();
    for (what, k) in [
        ("prior", prior.kappa()),
        ("lambda", lambda.kappa()),
        ("path", path.kappa()),
    ] {
        if k != kappa {
            return Err(Error::shape(format!("kappa = {kappa} for the {what}"), k));
        }
    }
    Ok(())
}

/// `Φ(λ, D, r, x, γ) = X_0`.
pub fn eval_phi(
    model: &MixedModel,
    prior: &SpinPrior,
    lambda: &Lambda,
    path: &Path,
    spec: &EvalSpec,
) -> Result<PhiValue> {
    evaluate(model, prior, lambda, path, spec, false)
}

/// [`eval_phi`] together with `∇_λ Φ`: exact chain rule on the quadrature
/// backend, central differences with step `1e-4` and common random numbers
/// on the Monte-Carlo backend.
pub fn eval_phi_with_gradient(
    model: &MixedModel,
    prior: &SpinPrior,
    lambda: &Lambda,
    path: &Path,
    spec: &EvalSpec,
) -> Result<PhiValue> {
    match spec.backend {
        Backend::Quadrature => evaluate(model, prior, lambda, path, spec, true),
        Backend::MonteCarlo => {
            let mut base = evaluate(model, prior, lambda, path, spec, false)?;
            let h = 1e-4;
            let mut grad = Vec::with_capacity(lambda.values().len());
            for i in 0..lambda.values().len() {
                let mut up = lambda.clone();
                up.values_mut()[i] += h;
                let mut down = lambda.clone();
                down.values_mut()[i] -= h;
                let fu = evaluate(model, prior, &up, path, spec, false)?;
                let fd = evaluate(model, prior, &down, path, spec, false)?;
                base.evaluations += fu.evaluations + fd.evaluations;
                grad.push((fu.value - fd.value) / (2.0 * h));
            }
            base.gradient = Some(grad);
            Ok(base)
        }
    }
}

/// Monte-Carlo values at `samples_per_level` and at twice that, for bias
/// extrapolation. On the quadrature backend both entries are the same value.
pub fn eval_phi_doubling(
    model: &MixedModel,
    prior: &SpinPrior,
    lambda: &Lambda,
    path: &Path,
    spec: &EvalSpec,
) -> Result<(PhiValue, PhiValue)> {
    let first = eval_phi(model, prior, lambda, path, spec)?;
    let doubled = EvalSpec {
        samples_per_level: spec.samples_per_level * 2,
        ..spec.clone()
    };
    let second = eval_phi(model, prior, lambda, path, &doubled)?;
    Ok((first, second))
}

fn evaluate(
    model: &MixedModel,
    prior: &SpinPrior,
    lambda: &Lambda,
    path: &Path,
    spec: &EvalSpec,
    want_grad: bool,
) -> Result<PhiValue> {
    spec.validate()?;
    check_inputs(model, prior, lambda, path)?;
    let inner = Inner::new(prior, lambda, spec.smoothing)?;
    let factors = increments(model, path)?
        .iter()
        .map(|inc| psd_factor(inc, RANK_TOL))
        .collect::<Result<Vec<_>>>()?;
    let root: Vec<f64> = model.external_field().to_vec();
    match spec.backend {
        Backend::Quadrature => quadrature(&inner, &factors, path.xs(), &root, spec, want_grad),
        Backend::MonteCarlo => monte_carlo(&inner, &factors, path.xs(), &root, spec),
    }
}

struct Plan<'a> {
    inner: &'a Inner,
    grids: Vec<GaussianGrid>,
    xs: &'a [f64],
    npairs: usize,
}

/// `(1/x) log Σ w_i exp(x v_i)`, or `Σ w_i v_i` for `x ≈ 0`, plus the
/// reweighting used by the chain rule.
fn combine(values: &[f64], weights: &[f64], x: f64, reweight: Option<&mut Vec<f64>>) -> f64 {
    if x < X_ZERO {
        if let Some(r) = reweight {
            r.clear();
            r.extend_from_slice(weights);
        }
        return values.iter().zip(weights).map(|(v, w)| v * w).sum();
    }
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(x * v));
    let mut sum = 0.0;
    for (v, w) in values.iter().zip(weights) {
        sum += w * (x * v - max).exp();
    }
    if let Some(r) = reweight {
        r.clear();
        r.extend(
            values
                .iter()
                .zip(weights)
                .map(|(v, w)| w * (x * v - max).exp() / sum),
        );
    }
    (max + sum.ln()) / x
}

impl Plan<'_> {
    fn child(&self, j: usize, s: &[f64], i: usize, grad: Option<&mut [f64]>) -> f64 {
        let point = self.grids[j].point(i);
        let t: Vec<f64> = s.iter().zip(point).map(|(a, b)| a + b).collect();
        if j + 1 == self.grids.len() {
            match grad {
                Some(g) => self.inner.value_grad(&t, g),
                None => self.inner.value(&t),
            }
        } else {
            self.node(j + 1, &t, grad)
        }
    }

    fn node(&self, j: usize, s: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let grid = &self.grids[j];
        let n = grid.len();
        let p = self.npairs;
        let want = grad.is_some();
        let mut values = vec![0.0; n];
        let mut grads = if want { vec![0.0; n * p] } else { Vec::new() };
        if j == 0 {
            let results: Vec<(f64, Vec<f64>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut g = vec![0.0; if want { p } else { 0 }];
                    let v = self.child(j, s, i, want.then_some(g.as_mut_slice()));
                    (v, g)
                })
                .collect();
            for (i, (v, g)) in results.into_iter().enumerate() {
                values[i] = v;
                if want {
                    grads[i * p..(i + 1) * p].copy_from_slice(&g);
                }
            }
        } else {
            for i in 0..n {
                let g = want.then(|| &mut grads[i * p..(i + 1) * p]);
                values[i] = self.child(j, s, i, g);
            }
        }
        match grad {
            None => combine(&values, &grid.weights, self.xs[j], None),
            Some(out) => {
                let mut w = Vec::with_capacity(n);
                let v = combine(&values, &grid.weights, self.xs[j], Some(&mut w));
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..n {
                    for (o, g) in out.iter_mut().zip(&grads[i * p..(i + 1) * p]) {
                        *o += w[i] * g;
                    }
                }
                v
            }
        }
    }
}

fn quadrature(
    inner: &Inner,
    factors: &[Mat],
    xs: &[f64],
    root: &[f64],
    spec: &EvalSpec,
    want_grad: bool,
) -> Result<PhiValue> {
    let kappa = root.len();
    let r = factors.len();
    if kappa * r > spec.dim_cap {
        return Err(Error::Budget(format!(
            "quadrature needs kappa * r = {} <= dim_cap = {}; use the mc backend",
            kappa * r,
            spec.dim_cap
        )));
    }
    let rule = StandardNormalRule::new(spec.nodes_per_level)?;
    let mut leaves: u64 = 1;
    for f in factors {
        let size = GaussianGrid::size(rule.len(), f.ncols()).unwrap_or(usize::MAX) as u64;
        leaves = leaves.saturating_mul(size);
    }
    if leaves > spec.grid_budget {
        return Err(Error::Budget(format!(
            "quadrature grid has {leaves} leaves, over the budget of {}",
            spec.grid_budget
        )));
    }
    let grids = factors
        .iter()
        .map(|f| GaussianGrid::new(f, &rule))
        .collect::<Result<Vec<_>>>()?;
    let plan = Plan {
        inner,
        grids,
        xs,
        npairs: inner.npairs,
    };
    let mut grad = vec![0.0; inner.npairs];
    let value = plan.node(0, root, want_grad.then_some(grad.as_mut_slice()));
    if !value.is_finite() {
        return Err(Error::Numerical(format!("Phi evaluated to {value}")));
    }
    Ok(PhiValue {
        value,
        std_error: 0.0,
        gradient: want_grad.then_some(grad),
        evaluations: leaves,
    })
}

struct Sampler<'a> {
    inner: &'a Inner,
    factors: &'a [Mat],
    xs: &'a [f64],
    samples: usize,
    antithetic: bool,
}

impl Sampler<'_> {
    /// One Gaussian draw `z = L ξ` for level `j`, returned with its mirror.
    fn draw(&self, j: usize, rng: &mut Rng) -> Vec<f64> {
        let f = &self.factors[j];
        let xi: Vec<f64> = (0..f.ncols()).map(|_| rng.sample(StandardNormal)).collect();
        (0..f.nrows())
            .map(|k| (0..f.ncols()).map(|d| f[(k, d)] * xi[d]).sum())
            .collect()
    }

    fn child(&self, j: usize, s: &[f64], z: &[f64], sign: f64, rng: &mut Rng) -> f64 {
        let t: Vec<f64> = s.iter().zip(z).map(|(a, b)| a + sign * b).collect();
        if j + 1 == self.factors.len() {
            self.inner.value(&t)
        } else {
            self.node(j + 1, &t, rng)
        }
    }

    fn signs(&self) -> &'static [f64] {
        if self.antithetic {
            &[1.0, -1.0]
        } else {
            &[1.0]
        }
    }

    fn node(&self, j: usize, s: &[f64], rng: &mut Rng) -> f64 {
        let mut values = Vec::with_capacity(self.samples);
        while values.len() < self.samples {
            let z = self.draw(j, rng);
            for &sign in self.signs() {
                values.push(self.child(j, s, &z, sign, rng));
            }
        }
        let w = vec![1.0 / values.len() as f64; values.len()];
        combine(&values, &w, self.xs[j], None)
    }
}

fn monte_carlo(
    inner: &Inner,
    factors: &[Mat],
    xs: &[f64],
    root: &[f64],
    spec: &EvalSpec,
) -> Result<PhiValue> {
    let r = factors.len();
    let leaves = (spec.samples_per_level as u64)
        .checked_pow(r as u32)
        .unwrap_or(u64::MAX);
    if leaves > spec.grid_budget {
        return Err(Error::Budget(format!(
            "{} samples over {r} levels need {leaves} leaves, over the budget of {}",
            spec.samples_per_level, spec.grid_budget
        )));
    }
    let sampler = Sampler {
        inner,
        factors,
        xs,
        samples: spec.samples_per_level,
        antithetic: spec.antithetic,
    };
    let group = sampler.signs().len();
    let units = spec.samples_per_level / group;
    // one independent unit (a draw and its mirror) per task
    let unit_values: Vec<Vec<f64>> = (0..units)
        .into_par_iter()
        .map(|u| {
            let mut rng = stream(spec.seed, tag::PHI_MC, u as u64);
            let z = sampler.draw(0, &mut rng);
            sampler
                .signs()
                .iter()
                .map(|&sign| sampler.child(0, root, &z, sign, &mut rng))
                .collect()
        })
        .collect();
    let x0 = xs[0];
    let (value, std_error) = if x0 < X_ZERO {
        let means: Vec<f64> = unit_values
            .iter()
            .map(|u| u.iter().sum::<f64>() / u.len() as f64)
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        (m, sample_std(&means) / (means.len() as f64).sqrt())
    } else {
        let max = unit_values
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(x0 * v));
        let means: Vec<f64> = unit_values
            .iter()
            .map(|u| u.iter().map(|v| (x0 * v - max).exp()).sum::<f64>() / u.len() as f64)
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let se = sample_std(&means) / (means.len() as f64).sqrt();
        ((max + m.ln()) / x0, se / (x0 * m))
    };
    if !value.is_finite() {
        return Err(Error::Numerical(format!("Phi evaluated to {value}")));
    }
    Ok(PhiValue {
        value,
        std_error,
        gradient: None,
        evaluations: leaves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::GramMatrix;

    fn scalar(v: f64) -> GramMatrix {
        GramMatrix::from_rows(&[vec![v]]).unwrap()
    }

    #[test]
    fn inner_examples() {
        let ising = SpinPrior::ising();
        assert!(
            eval_inner(&ising, &Lambda::scalar(0.0), &[0.0])
                .unwrap()
                .abs()
                < 1e-15
        );
        let v = eval_inner(&ising, &Lambda::scalar(0.3), &[1.2]).unwrap();
        assert!((v - (0.3 + 1.2_f64.cosh().ln())).abs() < 1e-14);
        let single = SpinPrior::new(vec![(vec![0.5, -2.0], 1.0)]).unwrap();
        let l = Lambda::from_values(2, vec![0.1, 0.2, 0.3]).unwrap();
        let v = eval_inner(&single, &l, &[1.0, 0.5]).unwrap();
        let expected = 0.5 - 1.0 + 0.1 * 0.25 + 0.2 * (0.5 * -2.0) + 0.3 * 4.0;
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn increments_examples() {
        let m = MixedModel::sk(1, 0.5).unwrap();
        let p = Path::single_level(scalar(1.0), 1.0).unwrap();
        let inc = increments(&m, &p).unwrap();
        assert!((inc[0][(0, 0)] - 0.5).abs() < 1e-15);
        let flat = Path::new(vec![0.2, 0.6], vec![scalar(1.0), scalar(1.0)]).unwrap();
        assert_eq!(increments(&m, &flat).unwrap()[1][(0, 0)], 0.0);
    }

    #[test]
    fn closed_form_sk_value() {
        let m = MixedModel::sk(1, 0.5).unwrap();
        let p = Path::single_level(scalar(1.0), 1.0).unwrap();
        let v = eval_phi(
            &m,
            &SpinPrior::ising_counting(),
            &Lambda::scalar(0.0),
            &p,
            &EvalSpec::default(),
        )
        .unwrap();
        assert!((v.value - (2f64.ln() + 0.25)).abs() < 1e-10, "{}", v.value);
        assert_eq!(v.std_error, 0.0);
    }

    #[test]
    fn free_model_gives_lambda() {
        let m = MixedModel::free(1).unwrap();
        let p = Path::single_level(scalar(1.0), 0.5).unwrap();
        for spec in [EvalSpec::default(), EvalSpec::monte_carlo(10, 1)] {
            let v = eval_phi(&m, &SpinPrior::ising(), &Lambda::scalar(0.3), &p, &spec).unwrap();
            assert!((v.value - 0.3).abs() < 1e-14);
            assert!(v.std_error.abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let m = MixedModel::new(2, [(2, vec![0.6, 0.4]), (4, vec![0.2, 0.3])]).unwrap();
        let prior = SpinPrior::hypercube(2).unwrap();
        let d = GramMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let mid = GramMatrix::new(d.as_matrix() * 0.4).unwrap();
        let p = Path::new(vec![0.3, 0.7], vec![mid, d]).unwrap();
        let l = Lambda::from_values(2, vec![0.2, -0.1, 0.3]).unwrap();
        let spec = EvalSpec::quadrature(8);
        let g = eval_phi_with_gradient(&m, &prior, &l, &p, &spec).unwrap();
        let grad = g.gradient.unwrap();
        for (i, gi) in grad.iter().enumerate() {
            let h = 1e-5;
            let mut up = l.clone();
            up.values_mut()[i] += h;
            let mut dn = l.clone();
            dn.values_mut()[i] -= h;
            let fd = (eval_phi(&m, &prior, &up, &p, &spec).unwrap().value
                - eval_phi(&m, &prior, &dn, &p, &spec).unwrap().value)
                / (2.0 * h);
            assert!((fd - gi).abs() < 1e-7, "component {i}: {fd} vs {gi}");
        }
    }

    #[test]
    fn budget_errors() {
        let m = MixedModel::sk(3, 0.5).unwrap();
        let prior = SpinPrior::hypercube(3).unwrap();
        let d = GramMatrix::identity(3);
        let gs: Vec<GramMatrix> = (1..=4)
            .map(|j| GramMatrix::new(d.as_matrix() * (j as f64 / 4.0)).unwrap())
            .collect();
        let p = Path::new(vec![0.1, 0.2, 0.3, 0.4], gs).unwrap();
        let r = eval_phi(&m, &prior, &Lambda::zeros(3), &p, &EvalSpec::default());
        assert!(matches!(r, Err(Error::Budget(_))));
    }
}
