use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::prior::{overlap, SpinConfig};
use crate::rng::{stream, tag};
use crate::stats::MeanSe;

use super::hamiltonian::{contract, product_block, tensor_len, CovarianceCheck};

/// One perturbation term: order `p`, directions `λ^1..λ^m` and multiplicities
/// `n_1..n_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaRepr", into = "ThetaRepr")]
pub struct Theta {
    p: u32,
    lambdas: Vec<Vec<f64>>,
    n: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThetaRepr {
    p: u32,
    lambdas: Vec<Vec<f64>>,
    n: Vec<u32>,
}

impl TryFrom<ThetaRepr> for Theta {
    type Error = Error;
    fn try_from(r: ThetaRepr) -> Result<Self> {
        Theta::new(r.p, r.lambdas, r.n)
    }
}

impl From<Theta> for ThetaRepr {
    fn from(t: Theta) -> Self {
        ThetaRepr {
            p: t.p,
            lambdas: t.lambdas,
            n: t.n,
        }
    }
}

impl Theta {
    pub fn new(p: u32, lambdas: Vec<Vec<f64>>, n: Vec<u32>) -> Result<Self> {
        if p == 0 {
            return Err(Error::arg("theta needs p >= 1"));
        }
        if lambdas.is_empty() || lambdas.len() != n.len() {
            return Err(Error::shape(
                format!("{} multiplicities", lambdas.len()),
                n.len(),
            ));
        }
        let kappa = lambdas[0].len();
        if kappa == 0 || lambdas.iter().any(|l| l.len() != kappa) {
            return Err(Error::shape(
                "directions of equal non-zero length",
                "ragged",
            ));
        }
        if lambdas.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("theta directions must be finite"));
        }
        if n.contains(&0) {
            return Err(Error::arg("theta multiplicities must be >= 1"));
        }
        Ok(Theta { p, lambdas, n })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn kappa(&self) -> usize {
        self.lambdas[0].len()
    }

    pub fn lambdas(&self) -> &[Vec<f64>] {
        &self.lambdas
    }

    pub fn multiplicities(&self) -> &[u32] {
        &self.n
    }

    pub fn m(&self) -> usize {
        self.n.len()
    }

    pub fn total_n(&self) -> u32 {
        self.n.iter().sum()
    }

    /// Tensor order `p Σ n_j` of the couplings.
    pub fn order(&self) -> u32 {
        self.p * self.total_n()
    }

    /// `Π_j (R^{∘p} λ^j, λ^j)^{n_j}`.
    pub fn covariance(&self, r: &Mat) -> Result<f64> {
        crate::linalg::ensure_square(r, self.kappa())?;
        let k = self.kappa();
        let pw = r.map(|v| v.powi(self.p as i32));
        Ok(self
            .lambdas
            .iter()
            .zip(&self.n)
            .map(|(l, &nj)| {
                let q: f64 = (0..k)
                    .flat_map(|a| (0..k).map(move |b| (a, b)))
                    .map(|(a, b)| pw[(a, b)] * l[a] * l[b])
                    .sum();
                q.powi(nj as i32)
            })
            .product())
    }

    /// `N^{p Σ n}` i.i.d. standard Gaussians.
    pub fn sample_couplings(&self, n_sites: usize, rng: &mut crate::rng::Rng) -> Result<Vec<f64>> {
        let len = tensor_len(n_sites, self.order())?;
        Ok((0..len).map(|_| rng.sample(StandardNormal)).collect())
    }
}

/// `S_λ(σ_e) = Σ_k λ_k σ_{e_1}(k)…σ_{e_p}(k)` over all `e ∈ [N]^p`.
fn direction_block(config: &SpinConfig, lambda: &[f64], p: u32) -> Vec<f64> {
    let n = config.n();
    let mut out = vec![0.0; n.pow(p)];
    for (k, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| config.site(i)[k]).collect();
        for (o, v) in out.iter_mut().zip(product_block(&col, p)) {
            *o += l * v;
        }
    }
    out
}

/// `h_θ(σ) = N^{-pΣn/2} Σ_I g_I Π_j Π_{c ≤ n_j} S_{λ^j}(σ_{e_c})`.
pub fn perturbation_h_theta(theta: &Theta, config: &SpinConfig, couplings: &[f64]) -> Result<f64> {
    if config.kappa() != theta.kappa() {
        return Err(Error::shape(theta.kappa(), config.kappa()));
    }
    let n = config.n();
    let len = tensor_len(n, theta.order())?;
    if couplings.len() != len {
        return Err(Error::shape(len, couplings.len()));
    }
    let blocks: Vec<Vec<f64>> = theta
        .lambdas
        .iter()
        .map(|l| direction_block(config, l, theta.p))
        .collect();
    let refs: Vec<&[f64]> = blocks
        .iter()
        .zip(&theta.n)
        .flat_map(|(b, &nj)| std::iter::repeat_n(b.as_slice(), nj as usize))
        .collect();
    Ok(contract(couplings, &refs) * (n as f64).powf(-(theta.order() as f64) / 2.0))
}

/// `E h_θ(σ¹) h_θ(σ²)` over `draws` coupling samples against
/// `Π_j (R^{∘p} λ^j, λ^j)^{n_j}` with `R = R(σ¹, σ²)`.
pub fn theta_covariance_check(
    theta: &Theta,
    a: &SpinConfig,
    b: &SpinConfig,
    draws: usize,
    seed: u64,
) -> Result<CovarianceCheck> {
    if draws < 2 {
        return Err(Error::arg("at least two draws are needed"));
    }
    let expected = theta.covariance(&overlap(a, b)?)?;
    let products: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, tag::PERTURBATION, i as u64);
            let g = theta.sample_couplings(a.n(), &mut rng)?;
            Ok(perturbation_h_theta(theta, a, &g)? * perturbation_h_theta(theta, b, &g)?)
        })
        .collect::<Result<_>>()?;
    let m = MeanSe::of(&products);
    Ok(CovarianceCheck {
        empirical: m.mean,
        std_error: m.std_error,
        expected,
        draws,
    })
}

/// The finite list of terms in `h_N`, with the growth exponent `γ` of
/// `s_N = N^γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub thetas: Vec<Theta>,
    pub gamma_s: f64,
    /// Multiplier of `m` in the exponent `j(θ)`.
    pub level_offset: u32,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            thetas: Vec::new(),
            gamma_s: 0.375,
            level_offset: 22,
        }
    }
}

/// Empirical variance of `h_N(σ)` against its closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCheck {
    pub empirical: f64,
    pub std_error: f64,
    pub exact: f64,
    pub draws: usize,
}

impl PerturbationSpec {
    pub fn new(thetas: Vec<Theta>, gamma_s: f64) -> Result<Self> {
        let s = PerturbationSpec {
            thetas,
            gamma_s,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    /// No perturbation at all.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_s > 0.25 && self.gamma_s < 0.5) {
            return Err(Error::arg(format!(
                "gamma_s = {} must lie in (1/4, 1/2)",
                self.gamma_s
            )));
        }
        if let Some(t) = self.thetas.first() {
            if self.thetas.iter().any(|s| s.kappa() != t.kappa()) {
                return Err(Error::shape("thetas of equal kappa", "mixed kappa"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// `s_N = N^γ`.
    pub fn strength(&self, n_sites: usize) -> f64 {
        (n_sites as f64).powf(self.gamma_s)
    }

    /// `j(θ) = p + Σ n_j + Σ j_0(λ^j) + level_offset · m`, where `j_0` numbers
    /// the distinct directions of the list from 1 in order of appearance.
    pub fn levels(&self) -> Vec<u32> {
        let mut registry: Vec<&Vec<f64>> = Vec::new();
        self.thetas
            .iter()
            .map(|t| {
                let j0: u32 = t
                    .lambdas
                    .iter()
                    .map(|l| {
                        let pos = registry.iter().position(|r| *r == l).unwrap_or_else(|| {
                            registry.push(l);
                            registry.len() - 1
                        });
                        pos as u32 + 1
                    })
                    .sum();
                t.p + t.total_n() + j0 + self.level_offset * t.m() as u32
            })
            .collect()
    }

    /// `2^{-j(θ)} b_p^{-Σn}` with `b_p = κ c^p`, for spins bounded by `c`.
    pub fn weights(&self, support_bound: f64) -> Vec<f64> {
        self.thetas
            .iter()
            .zip(self.levels())
            .map(|(t, j)| {
                let b = t.kappa() as f64 * support_bound.powi(t.p as i32);
                2f64.powi(-(j as i32)) * b.powi(-(t.total_n() as i32))
            })
            .collect()
    }

    /// `u_θ ~ U[1, 2]`, one per term.
    pub fn sample_u(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = stream(seed, tag::UNIFORM_U, index);
        self.thetas
            .iter()
            .map(|_| rng.random_range(1.0..=2.0))
            .collect()
    }

    /// One coupling tensor per term.
    pub fn sample_couplings(&self, n_sites: usize, seed: u64, index: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = stream(seed, tag::PERTURBATION, index);
        self.thetas
            .iter()
            .map(|t| t.sample_couplings(n_sites, &mut rng))
            .collect()
    }

    /// `h_N(σ) = Σ_θ w_θ u_θ h_θ(σ)` (without the factor `s_N`).
    pub fn h(
        &self,
        config: &SpinConfig,
        couplings: &[Vec<f64>],
        u: &[f64],
        weights: &[f64],
    ) -> Result<f64> {
        if couplings.len() != self.thetas.len() || u.len() != self.thetas.len() {
            return Err(Error::shape(
                self.thetas.len(),
                couplings.len().min(u.len()),
            ));
        }
        let mut total = 0.0;
        for (((t, g), ui), w) in self.thetas.iter().zip(couplings).zip(u).zip(weights) {
            total += w * ui * perturbation_h_theta(t, config, g)?;
        }
        Ok(total)
    }

    /// `Var h_N(σ) = Σ_θ w_θ² u_θ² C_θ(R(σ, σ))`.
    pub fn variance(&self, config: &SpinConfig, u: &[f64], weights: &[f64]) -> Result<f64> {
        let r = overlap(config, config)?;
        let mut total = 0.0;
        for ((t, ui), w) in self.thetas.iter().zip(u).zip(weights) {
            total += (w * ui).powi(2) * t.covariance(&r)?;
        }
        Ok(total)
    }

    /// Samples `h_N(σ)` and fails when its variance exceeds one by more than
    /// three standard errors.
    pub fn variance_check(
        &self,
        config: &SpinConfig,
        support_bound: f64,
        draws: usize,
        seed: u64,
    ) -> Result<VarianceCheck> {
        if draws < 2 {
            return Err(Error::arg("at least two draws are needed"));
        }
        let weights = self.weights(support_bound);
        let u = self.sample_u(seed, 0);
        let exact = self.variance(config, &u, &weights)?;
        let squares: Vec<f64> = (0..draws)
            .into_par_iter()
            .map(|i| {
                let g = self.sample_couplings(config.n(), seed, i as u64)?;
                Ok(self.h(config, &g, &u, &weights)?.powi(2))
            })
            .collect::<Result<_>>()?;
        let m = MeanSe::of(&squares);
        if m.mean > 1.0 + 3.0 * m.std_error {
            return Err(Error::Numerical(format!(
                "perturbation variance {} exceeds 1 (s.e. {})",
                m.mean, m.std_error
            )));
        }
        Ok(VarianceCheck {
            empirical: m.mean,
            std_error: m.std_error,
            exact,
            draws,
        })
    }
}
