use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sup_norm, symmetrized, GramMatrix, Mat, SortedEigen};
use crate::mixing::MixedModel;
use crate::prior::{Membership, SpinPrior, HULL_TOL};
use crate::rng::{stream, tag};

use super::functional::{assemble, theta_term};
use super::{eval_phi, phi_star_from, EvalSpec, Lambda, Path};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    /// Starting points of the outer ascent over hull weights.
    pub multi_starts: usize,
    /// Iteration cap of the `λ` descent.
    pub max_iter: usize,
    /// Initial step of the `λ` descent.
    pub step: f64,
    /// Gradient sup-norm at which the `λ` descent stops.
    pub tol: f64,
    pub outer_iter: usize,
    pub path_iter: usize,
    /// Rounds of alternating `λ` and path updates.
    pub alternations: usize,
    pub fd_step: f64,
    /// Inner solves allowed per outer start.
    pub inner_budget: usize,
    pub seed: u64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            multi_starts: 8,
            max_iter: 500,
            step: 0.1,
            tol: 1e-8,
            outer_iter: 30,
            path_iter: 100,
            alternations: 8,
            fd_step: 1e-5,
            inner_budget: 200,
            seed: 0,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.multi_starts == 0 || self.alternations == 0 || self.inner_budget == 0 {
            return Err(Error::arg(
                "multi_starts, alternations and inner_budget must be positive",
            ));
        }
        if !(self.step > 0.0 && self.tol > 0.0 && self.fd_step > 0.0) {
            return Err(Error::arg("step, tol and fd_step must be positive"));
        }
        Ok(())
    }
}

/// Unconstrained parametrization of a path ending at a given `D`.
///
/// `x` is clamped to `[0, 1]` and sorted. With `S_j = Σ_{i≤j} F_i F_i^T` and
/// `C = S_r + ηI`, the levels are `γ_j = D^{1/2} C^{-1/2} S_j C^{-1/2} D^{1/2}`
/// for `j < r` and `γ_r = D`, which is monotone for any `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub x: Vec<f64>,
    /// Row-major κ×κ factors `F_1..F_r`.
    pub factors: Vec<Vec<f64>>,
}

const ETA: f64 = 1e-9;

impl PathParams {
    /// `x_j = (j+1)/(r+1)` and `γ_j ≈ (j/r) D`.
    pub fn initial(r: usize, kappa: usize) -> Self {
        let scale = (1.0 / r as f64).sqrt();
        let f: Vec<f64> = Mat::identity(kappa, kappa)
            .iter()
            .map(|v| v * scale)
            .collect();
        PathParams {
            x: (0..r).map(|j| (j + 1) as f64 / (r + 1) as f64).collect(),
            factors: vec![f; r],
        }
    }

    pub fn r(&self) -> usize {
        self.x.len()
    }

    fn kappa(&self) -> usize {
        (self.factors[0].len() as f64).sqrt().round() as usize
    }

    fn normalize(&mut self) {
        for v in &mut self.x {
            *v = v.clamp(0.0, 1.0);
        }
        self.x.sort_by(f64::total_cmp);
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        for f in &self.factors {
            v.extend_from_slice(f);
        }
        v
    }

    fn with_flat(&self, v: &[f64]) -> Self {
        let r = self.r();
        let kk = self.factors[0].len();
        let mut p = PathParams {
            x: v[..r].to_vec(),
            factors: (0..r)
                .map(|i| v[r + i * kk..r + (i + 1) * kk].to_vec())
                .collect(),
        };
        p.normalize();
        p
    }

    pub fn to_path(&self, d: &GramMatrix) -> Result<Path> {
        let kappa = self.kappa();
        if kappa != d.kappa() {
            return Err(Error::shape(d.kappa(), kappa));
        }
        let r = self.r();
        let sqrt_d = SortedEigen::new(d.as_matrix()).map(|v| v.max(0.0).sqrt());
        let mut partial = Vec::with_capacity(r);
        let mut s = Mat::zeros(kappa, kappa);
        for f in &self.factors {
            let f = Mat::from_row_slice(kappa, kappa, f);
            s += &f * f.transpose();
            partial.push(s.clone());
        }
        let c = &s + Mat::identity(kappa, kappa) * ETA;
        let c_inv_sqrt = SortedEigen::new(&c).map(|v| 1.0 / v.sqrt());
        let mut gammas = Vec::with_capacity(r);
        for sj in partial.iter().take(r - 1) {
            let g = &sqrt_d * &c_inv_sqrt * sj * &c_inv_sqrt * &sqrt_d;
            gammas.push(GramMatrix::with_tolerance(symmetrized(&g), 1e-9)?);
        }
        gammas.push(d.clone());
        let mut x = self.x.clone();
        for v in &mut x {
            *v = v.clamp(0.0, 1.0);
        }
        x.sort_by(f64::total_cmp);
        Path::new(x, gammas)
    }
}

/// Approximate `inf_{λ, π ∈ Π_D} P` at a fixed `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerResult {
    pub value: f64,
    pub std_error: f64,
    pub lambda: Lambda,
    pub path: Path,
    pub params: PathParams,
    /// Value reached when every round starts with the `λ` update.
    pub value_lambda_first: f64,
    /// Value reached when every round starts with the path update.
    pub value_path_first: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub value: f64,
    pub std_error: f64,
    pub d: GramMatrix,
    /// Weights on the distinct hull generators.
    pub hull_weights: Vec<f64>,
    pub generators: Vec<GramMatrix>,
    pub lambda: Lambda,
    pub path: Path,
    pub value_lambda_first: f64,
    pub value_path_first: f64,
    pub converged: bool,
    pub budget_exhausted: bool,
    pub inner_solves: usize,
    /// Best value reached from each outer start.
    pub start_values: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Order {
    LambdaFirst,
    PathFirst,
}

struct Problem<'a> {
    model: &'a MixedModel,
    prior: &'a SpinPrior,
    spec: &'a EvalSpec,
    opt: &'a OptimizerSpec,
}

impl Problem<'_> {
    fn p_value(&self, lambda: &Lambda, d: &GramMatrix, params: &PathParams) -> Result<f64> {
        let path = params.to_path(d)?;
        let phi = eval_phi(self.model, self.prior, lambda, &path, self.spec)?;
        Ok(phi.value - lambda.pairing(d)? - theta_term(self.model, &path)?)
    }

    /// Projected descent over the path parameters at fixed `λ`, with
    /// finite-difference gradients (one-sided at the `x` box boundary).
    fn path_descent(
        &self,
        lambda: &Lambda,
        d: &GramMatrix,
        start: PathParams,
    ) -> Result<(PathParams, f64)> {
        let h = self.opt.fd_step;
        let r = start.r();
        let mut params = start;
        let mut f = self.p_value(lambda, d, &params)?;
        let mut step = self.opt.step;
        for _ in 0..self.opt.path_iter {
            let base = params.flat();
            let mut grad = vec![0.0; base.len()];
            for i in 0..base.len() {
                let (lo, hi) = if i < r {
                    ((base[i] - h).max(0.0), (base[i] + h).min(1.0))
                } else {
                    (base[i] - h, base[i] + h)
                };
                let mut up = base.clone();
                up[i] = hi;
                let mut dn = base.clone();
                dn[i] = lo;
                let fu = self.p_value(lambda, d, &params.with_flat(&up))?;
                let fd = self.p_value(lambda, d, &params.with_flat(&dn))?;
                grad[i] = (fu - fd) / (hi - lo);
            }
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = base.iter().zip(&grad).map(|(b, g)| b - step * g).collect();
                let candidate = params.with_flat(&trial);
                let moved: f64 = candidate
                    .flat()
                    .iter()
                    .zip(&base)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if moved == 0.0 {
                    break;
                }
                let ft = self.p_value(lambda, d, &candidate)?;
                if ft <= f - 1e-4 * moved / step {
                    params = candidate;
                    f = ft;
                    accepted = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok((params, f))
    }

    fn lambda_step(
        &self,
        d: &GramMatrix,
        params: &PathParams,
        lambda: Lambda,
    ) -> Result<(Lambda, f64, bool)> {
        let path = params.to_path(d)?;
        let star = phi_star_from(
            self.model, self.prior, d, &path, self.spec, self.opt, lambda,
        )?;
        Ok((
            star.lambda,
            star.value - theta_term(self.model, &path)?,
            star.converged,
        ))
    }

    fn run_order(
        &self,
        d: &GramMatrix,
        order: Order,
        params: PathParams,
        lambda: Lambda,
    ) -> Result<(PathParams, Lambda, f64, bool)> {
        let mut params = params;
        let mut lambda = lambda;
        let mut value = f64::INFINITY;
        let mut converged = false;
        for _ in 0..self.opt.alternations {
            let v = match order {
                Order::PathFirst => {
                    params = self.path_descent(&lambda, d, params)?.0;
                    let (l, v, c) = self.lambda_step(d, &params, lambda)?;
                    lambda = l;
                    converged = c;
                    v
                }
                Order::LambdaFirst => {
                    let (l, _, c) = self.lambda_step(d, &params, lambda)?;
                    lambda = l;
                    converged = c;
                    let (p, v) = self.path_descent(&lambda, d, params)?;
                    params = p;
                    v
                }
            };
            let done = (value - v).abs() <= 1e-10 * v.abs().max(1.0);
            value = v;
            if done {
                break;
            }
        }
        Ok((params, lambda, value, converged))
    }

    fn solve(&self, d: &GramMatrix, r: usize, warm: Option<&InnerResult>) -> Result<InnerResult> {
        let (params, lambda) = match warm {
            Some(w) if w.params.r() == r => (w.params.clone(), w.lambda.clone()),
            _ => (PathParams::initial(r, d.kappa()), Lambda::zeros(d.kappa())),
        };
        let a = self.run_order(d, Order::LambdaFirst, params.clone(), lambda.clone())?;
        let b = self.run_order(d, Order::PathFirst, params, lambda)?;
        let (value_lambda_first, value_path_first) = (a.2, b.2);
        let best = if a.2 <= b.2 { a } else { b };
        let (params, lambda, _, converged) = best;
        let path = params.to_path(d)?;
        let phi = eval_phi(self.model, self.prior, &lambda, &path, self.spec)?;
        let pv = assemble(self.model, &lambda, d, &path, phi.value, phi.std_error)?;
        Ok(InnerResult {
            value: pv.value,
            std_error: pv.std_error,
            lambda,
            path,
            params,
            value_lambda_first,
            value_path_first,
            converged,
        })
    }
}

/// `inf_{λ, π ∈ Π_D} P(λ, D, π)` over paths with `r` levels, for `D` in the
/// constraint hull.
pub fn optimize_at(
    model: &MixedModel,
    prior: &SpinPrior,
    d: &GramMatrix,
    r: usize,
    spec: &EvalSpec,
    opt: &OptimizerSpec,
) -> Result<InnerResult> {
    opt.validate()?;
    if r == 0 {
        return Err(Error::arg("level budget r must be at least 1"));
    }
    if let Membership::Outside { residual, entry } = prior.hull().membership(d, HULL_TOL)? {
        return Err(Error::Infeasible(format!(
            "D is outside the constraint hull (residual {residual:e} at entry {entry:?})"
        )));
    }
    Problem {
        model,
        prior,
        spec,
        opt,
    }
    .solve(d, r, None)
}

/// Distinct hull generators (duplicates up to `1e-12` removed).
fn distinct_generators(prior: &SpinPrior) -> Vec<GramMatrix> {
    let mut out: Vec<GramMatrix> = Vec::new();
    for g in prior.hull().generators() {
        if !out
            .iter()
            .any(|h| sup_norm(&(h.as_matrix() - g.as_matrix())) <= 1e-12)
        {
            out.push(g.clone());
        }
    }
    out
}

fn hull_point(generators: &[GramMatrix], w: &[f64]) -> Result<GramMatrix> {
    let k = generators[0].kappa();
    let mut d = Mat::zeros(k, k);
    for (g, &wi) in generators.iter().zip(w) {
        d += g.as_matrix() * wi;
    }
    GramMatrix::with_tolerance(symmetrized(&d), 1e-9)
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

struct StartOutcome {
    weights: Vec<f64>,
    inner: InnerResult,
    solves: usize,
    exhausted: bool,
}

fn ascend(
    problem: &Problem<'_>,
    generators: &[GramMatrix],
    r: usize,
    w0: Vec<f64>,
) -> Result<StartOutcome> {
    let opt = problem.opt;
    let n = generators.len();
    let mut solves = 0;
    let mut exhausted = false;
    let mut w = w0;
    let mut best = problem.solve(&hull_point(generators, &w)?, r, None)?;
    solves += 1;
    let h = 1e-3;
    let mut step = 0.5;
    'outer: for _ in 0..opt.outer_iter {
        let mut grad = vec![0.0; n];
        for (i, g) in grad.iter_mut().enumerate() {
            if solves >= opt.inner_budget {
                exhausted = true;
                break 'outer;
            }
            let shifted: Vec<f64> = (0..n)
                .map(|j| w[j] + h * (f64::from(u8::from(i == j)) - w[j]))
                .collect();
            let v = problem.solve(&hull_point(generators, &shifted)?, r, Some(&best))?;
            solves += 1;
            *g = (v.value - best.value) / h;
        }
        let mut accepted = false;
        for _ in 0..12 {
            if solves >= opt.inner_budget {
                exhausted = true;
                break 'outer;
            }
            let trial = project_simplex(
                &w.iter()
                    .zip(&grad)
                    .map(|(a, g)| a + step * g)
                    .collect::<Vec<_>>(),
            );
            let moved: f64 = trial.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
            if moved < 1e-10 {
                break;
            }
            let cand = problem.solve(&hull_point(generators, &trial)?, r, Some(&best))?;
            solves += 1;
            if cand.value > best.value {
                w = trial;
                best = cand;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(StartOutcome {
        weights: w,
        inner: best,
        solves,
        exhausted,
    })
}

/// `sup_{D ∈ 𝒟} inf_{λ, π ∈ Π_D} P(λ, D, π)` over paths with `r` levels:
/// projected ascent over hull weights from several starts, each step solving
/// the inner problem by alternating `Φ*` and path descent.
pub fn optimize(
    model: &MixedModel,
    prior: &SpinPrior,
    r: usize,
    spec: &EvalSpec,
    opt: &OptimizerSpec,
) -> Result<OptimizeResult> {
    opt.validate()?;
    spec.validate()?;
    if r == 0 {
        return Err(Error::arg("level budget r must be at least 1"));
    }
    if model.kappa() != prior.kappa() {
        return Err(Error::shape(model.kappa(), prior.kappa()));
    }
    let generators = distinct_generators(prior);
    let n = generators.len();
    let problem = Problem {
        model,
        prior,
        spec,
        opt,
    };
    let starts: Vec<Vec<f64>> = if n == 1 {
        vec![vec![1.0]]
    } else {
        (0..opt.multi_starts)
            .map(|s| {
                if s == 0 {
                    vec![1.0 / n as f64; n]
                } else {
                    let mut rng = stream(opt.seed, tag::OPTIMIZER, s as u64);
                    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                    let total: f64 = e.iter().sum();
                    e.iter().map(|v| v / total).collect()
                }
            })
            .collect()
    };
    let outcomes: Vec<StartOutcome> = if n == 1 {
        let d = generators[0].clone();
        let inner = problem.solve(&d, r, None)?;
        vec![StartOutcome {
            weights: vec![1.0],
            inner,
            solves: 1,
            exhausted: false,
        }]
    } else {
        starts
            .into_par_iter()
            .map(|w0| ascend(&problem, &generators, r, w0))
            .collect::<Result<Vec<_>>>()?
    };
    let start_values = outcomes.iter().map(|o| o.inner.value).collect();
    let inner_solves = outcomes.iter().map(|o| o.solves).sum();
    let budget_exhausted = outcomes.iter().any(|o| o.exhausted);
    let best = outcomes
        .into_iter()
        .reduce(|a, b| if b.inner.value > a.inner.value { b } else { a })
        .expect("at least one start");
    let d = best.inner.path.endpoint().clone();
    Ok(OptimizeResult {
        value: best.inner.value,
        std_error: best.inner.std_error,
        d,
        hull_weights: best.weights,
        generators,
        lambda: best.inner.lambda,
        path: best.inner.path,
        value_lambda_first: best.inner.value_lambda_first,
        value_path_first: best.inner.value_path_first,
        converged: best.inner.converged,
        budget_exhausted,
        inner_solves,
        start_values,
    })
}
