use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::GramMatrix;
use crate::mixing::{sum_all, MixedModel};
use crate::prior::SpinPrior;

use super::{eval_phi, EvalSpec, Lambda, Path};

/// Value of `P(λ, D, π)` with its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParisiValue {
    pub value: f64,
    pub std_error: f64,
    pub phi: f64,
    /// `Σ_{k≤k'} λ_{kk'} D_{kk'}`.
    pub lagrange: f64,
    /// `½ Σ_j x_j Sum(θ(γ_{j+1}) - θ(γ_j))`.
    pub theta_term: f64,
    /// `½ Sum(θ(D)) - ½ ∫ Sum(θ(π(t))) dt`.
    pub theta_term_rearranged: f64,
}

/// Agreement demanded between the two forms of the θ-term.
const REARRANGEMENT_TOL: f64 = 1e-10;

/// `½ Σ_{j=0}^{r-1} x_j Sum(θ(γ_{j+1}) - θ(γ_j))`.
pub fn theta_term(model: &MixedModel, path: &Path) -> Result<f64> {
    let sums = theta_sums(model, path)?;
    Ok(0.5
        * path
            .xs()
            .iter()
            .enumerate()
            .map(|(j, x)| x * (sums[j + 1] - sums[j]))
            .sum::<f64>())
}

/// `½ Sum(θ(D)) - ½ ∫_0^1 Sum(θ(π(t))) dt`.
pub fn theta_term_rearranged(model: &MixedModel, path: &Path) -> Result<f64> {
    let sums = theta_sums(model, path)?;
    let b = path.breakpoints();
    // π = γ_j on (x_{j-1}, x_j]
    let integral: f64 = (0..=path.r()).map(|j| (b[j + 1] - b[j]) * sums[j]).sum();
    Ok(0.5 * sums[path.r()] - 0.5 * integral)
}

fn theta_sums(model: &MixedModel, path: &Path) -> Result<Vec<f64>> {
    path.gammas()
        .iter()
        .map(|g| Ok(sum_all(&model.theta_hadamard(g)?)))
        .collect()
}

/// `P = Φ - Σ λ_{kk'} D_{kk'} - ½ Σ_j x_j Sum(θ(γ_{j+1}) - θ(γ_j))`.
pub fn eval_parisi(
    model: &MixedModel,
    prior: &SpinPrior,
    lambda: &Lambda,
    d: &GramMatrix,
    path: &Path,
    spec: &EvalSpec,
) -> Result<ParisiValue> {
    path.check_endpoint(d)?;
    let phi = eval_phi(model, prior, lambda, path, spec)?;
    assemble(model, lambda, d, path, phi.value, phi.std_error)
}

pub(crate) fn assemble(
    model: &MixedModel,
    lambda: &Lambda,
    d: &GramMatrix,
    path: &Path,
    phi: f64,
    std_error: f64,
) -> Result<ParisiValue> {
    let lagrange = lambda.pairing(d)?;
    let t = theta_term(model, path)?;
    let t2 = theta_term_rearranged(model, path)?;
    if (t - t2).abs() > REARRANGEMENT_TOL * t.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "theta-term forms disagree: {t} vs {t2}"
        )));
    }
    Ok(ParisiValue {
        value: phi - lagrange - t,
        std_error,
        phi,
        lagrange,
        theta_term: t,
        theta_term_rearranged: t2,
    })
}

/// `ε ‖λ‖_1 + P(λ, D, π)`: the finite-N upper bound on the constrained free
/// energy without its unquantified `O(ε)` constant.
#[allow(clippy::too_many_arguments)]
pub fn guerra_bound(
    model: &MixedModel,
    prior: &SpinPrior,
    d: &GramMatrix,
    epsilon: f64,
    lambda: &Lambda,
    path: &Path,
    spec: &EvalSpec,
) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::arg("epsilon must be non-negative"));
    }
    let p = eval_parisi(model, prior, lambda, d, path, spec)?;
    Ok(epsilon * lambda.l1_norm() + p.value)
}
