//! Discrete paths, the recursive functional `Φ`, the full functional `P`,
//! the Legendre transform `Φ*` and the sup-inf optimizer.

mod functional;
mod legendre;
mod optimize;
mod path;
pub(crate) mod phi;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub use functional::{eval_parisi, guerra_bound, theta_term, theta_term_rearranged, ParisiValue};
pub use legendre::{phi_star, phi_star_from, PhiStar};
pub use optimize::{optimize, optimize_at, InnerResult, OptimizeResult, OptimizerSpec, PathParams};
pub use path::{path_distance, Path};
pub use phi::{
    eval_inner, eval_phi, eval_phi_doubling, eval_phi_with_gradient, increments, PhiValue, X_ZERO,
};

/// Upper-triangular Lagrange multipliers `λ_{kk'}`, `k ≤ k'`, stored row by
/// row: `(0,0), (0,1), …, (0,κ-1), (1,1), …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub struct Lambda {
    kappa: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LambdaRepr {
    kappa: usize,
    values: Vec<f64>,
}

impl TryFrom<LambdaRepr> for Lambda {
    type Error = Error;
    fn try_from(r: LambdaRepr) -> Result<Self> {
        Lambda::from_values(r.kappa, r.values)
    }
}

impl From<Lambda> for LambdaRepr {
    fn from(l: Lambda) -> Self {
        LambdaRepr {
            kappa: l.kappa,
            values: l.values,
        }
    }
}

/// Number of pairs `k ≤ k'`.
pub fn pair_count(kappa: usize) -> usize {
    kappa * (kappa + 1) / 2
}

/// `(k, k')` pairs in storage order.
pub fn pairs(kappa: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..kappa).flat_map(move |k| (k..kappa).map(move |k2| (k, k2)))
}

impl Lambda {
    pub fn zeros(kappa: usize) -> Self {
        Lambda {
            kappa,
            values: vec![0.0; pair_count(kappa)],
        }
    }

    pub fn from_values(kappa: usize, values: Vec<f64>) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::arg("lambda needs kappa >= 1"));
        }
        if values.len() != pair_count(kappa) {
            return Err(Error::shape(pair_count(kappa), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("lambda entries must be finite"));
        }
        Ok(Lambda { kappa, values })
    }

    /// Reads the upper triangle of a square matrix.
    pub fn from_upper(m: &Mat) -> Result<Self> {
        crate::linalg::ensure_square(m, m.nrows())?;
        let kappa = m.nrows();
        Self::from_values(kappa, pairs(kappa).map(|(a, b)| m[(a, b)]).collect())
    }

    /// Scalar case `κ = 1`.
    pub fn scalar(v: f64) -> Self {
        Lambda {
            kappa: 1,
            values: vec![v],
        }
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn index(&self, k: usize, k2: usize) -> Result<usize> {
        let (a, b) = if k <= k2 { (k, k2) } else { (k2, k) };
        if b >= self.kappa {
            return Err(Error::IndexOutOfRange {
                index: b,
                kappa: self.kappa,
            });
        }
        Ok(a * self.kappa - a * (a + 1) / 2 + b)
    }

    pub fn get(&self, k: usize, k2: usize) -> Result<f64> {
        Ok(self.values[self.index(k, k2)?])
    }

    pub fn set(&mut self, k: usize, k2: usize, v: f64) -> Result<()> {
        let i = self.index(k, k2)?;
        self.values[i] = v;
        Ok(())
    }

    /// `Σ_{k≤k'} λ_{kk'} D_{kk'}`.
    pub fn pairing(&self, d: &Mat) -> Result<f64> {
        crate::linalg::ensure_square(d, self.kappa)?;
        Ok(pairs(self.kappa)
            .zip(&self.values)
            .map(|((a, b), l)| l * d[(a, b)])
            .sum())
    }

    /// `Σ_{k≤k'} λ_{kk'} σ(k)σ(k')`.
    pub fn quadratic(&self, sigma: &[f64]) -> f64 {
        pairs(self.kappa)
            .zip(&self.values)
            .map(|((a, b), l)| l * sigma[a] * sigma[b])
            .sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Upper triangle of a symmetric matrix in [`Lambda`] storage order.
pub fn upper_entries(m: &Mat) -> Vec<f64> {
    pairs(m.nrows()).map(|(a, b)| m[(a, b)]).collect()
}

/// How Gaussian expectations in the recursion are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Quadrature,
    #[serde(alias = "mc")]
    MonteCarlo,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrature" => Ok(Backend::Quadrature),
            "mc" | "monte_carlo" | "monte-carlo" => Ok(Backend::MonteCarlo),
            other => Err(Error::arg(format!(
                "unknown backend {other:?} (expected quadrature or mc)"
            ))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Quadrature => "quadrature",
            Backend::MonteCarlo => "mc",
        })
    }
}

/// Inner-integrand smoothing by an independent centred Gaussian `g` with
/// variance `delta` per `λ`-component, integrated with `nodes` Gauss–Hermite
/// nodes per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    pub delta: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub backend: Backend,
    pub nodes_per_level: usize,
    pub samples_per_level: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Largest `κ·r` accepted by the quadrature backend.
    pub dim_cap: usize,
    /// Largest number of innermost integrand evaluations per call.
    pub grid_budget: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<Smoothing>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            backend: Backend::Quadrature,
            nodes_per_level: 16,
            samples_per_level: 1000,
            seed: 0,
            antithetic: true,
            dim_cap: 10,
            grid_budget: 50_000_000,
            smoothing: None,
        }
    }
}

impl EvalSpec {
    pub fn quadrature(nodes_per_level: usize) -> Self {
        EvalSpec {
            nodes_per_level,
            ..Self::default()
        }
    }

    pub fn monte_carlo(samples_per_level: usize, seed: u64) -> Self {
        EvalSpec {
            backend: Backend::MonteCarlo,
            samples_per_level,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_level == 0 {
            return Err(Error::arg("nodes_per_level must be positive"));
        }
        if self.samples_per_level == 0 {
            return Err(Error::arg("samples_per_level must be positive"));
        }
        if self.antithetic && self.samples_per_level % 2 == 1 {
            return Err(Error::arg(
                "antithetic sampling needs an even samples_per_level",
            ));
        }
        if let Some(s) = self.smoothing {
            if !(s.delta.is_finite() && s.delta >= 0.0) || s.nodes == 0 {
                return Err(Error::arg("smoothing needs delta >= 0 and nodes >= 1"));
            }
        }
        Ok(())
    }
}
