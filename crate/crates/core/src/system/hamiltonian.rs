use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixing::MixedModel;
use crate::prior::{overlap, SpinConfig};
use crate::rng::{stream, tag};
use crate::stats::MeanSe;

/// Largest coupling tensor (entries) a single term may have.
pub const TERM_BUDGET: usize = 1 << 24;

/// Gaussian couplings `g_{i_1..i_p}`, one tensor per `p`, shared by all
/// spin coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Disorder {
    n: usize,
    couplings: BTreeMap<u32, Vec<f64>>,
}

pub(crate) fn tensor_len(n: usize, order: u32) -> Result<usize> {
    n.checked_pow(order)
        .filter(|&len| len <= TERM_BUDGET)
        .ok_or_else(|| {
            Error::Budget(format!(
                "N^p = {n}^{order} coupling terms exceed the budget of {TERM_BUDGET}"
            ))
        })
}

impl Disorder {
    /// Independent standard Gaussian couplings for every `p` of the model.
    /// Draw `index` of `seed` is always the same tensor set.
    pub fn sample(model: &MixedModel, n: usize, seed: u64, index: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("N must be positive"));
        }
        let mut rng = stream(seed, tag::DISORDER, index);
        let mut couplings = BTreeMap::new();
        for (p, _) in model.terms() {
            let len = tensor_len(n, p)?;
            couplings.insert(p, (0..len).map(|_| rng.sample(StandardNormal)).collect());
        }
        Ok(Disorder { n, couplings })
    }

    pub fn from_couplings(n: usize, couplings: BTreeMap<u32, Vec<f64>>) -> Result<Self> {
        for (&p, g) in &couplings {
            if g.len() != tensor_len(n, p)? {
                return Err(Error::shape(
                    format!("{n}^{p} couplings for p = {p}"),
                    g.len(),
                ));
            }
        }
        Ok(Disorder { n, couplings })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn couplings(&self, p: u32) -> Option<&[f64]> {
        self.couplings.get(&p).map(Vec::as_slice)
    }
}

/// `Σ_e g_e Π_b B_b(e_b)` where the index `e` splits into consecutive blocks,
/// block `b` ranging over `blocks[b].len()` values, first block slowest.
pub(crate) fn contract(g: &[f64], blocks: &[&[f64]]) -> f64 {
    let mut current: Vec<f64> = g.to_vec();
    for block in blocks.iter().rev() {
        let width = block.len();
        current = current
            .chunks_exact(width)
            .map(|row| row.iter().zip(*block).map(|(a, b)| a * b).sum())
            .collect();
    }
    current[0]
}

/// `(Π_l s[i_l])` over all `i ∈ {0..N}^p`, first index slowest.
pub(crate) fn product_block(s: &[f64], p: u32) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..p {
        out = out
            .iter()
            .flat_map(|a| s.iter().map(move |b| a * b))
            .collect();
    }
    out
}

/// `H_N(σ) = Σ_k Σ_p β_p(k) N^{-(p-1)/2} Σ_{i_1..i_p} g_{i_1..i_p} σ_{i_1}(k)…σ_{i_p}(k)`
/// plus `Σ_i ⟨h, σ_i⟩` when the model carries an external field.
pub fn hamiltonian(model: &MixedModel, config: &SpinConfig, disorder: &Disorder) -> Result<f64> {
    if config.kappa() != model.kappa() {
        return Err(Error::shape(model.kappa(), config.kappa()));
    }
    let n = config.n();
    if n != disorder.n {
        return Err(Error::shape(format!("N = {}", disorder.n), n));
    }
    let columns: Vec<Vec<f64>> = (0..model.kappa())
        .map(|k| (0..n).map(|i| config.site(i)[k]).collect())
        .collect();
    let mut total = field_energy(model, config);
    for (p, beta) in model.terms() {
        let g = disorder
            .couplings(p)
            .ok_or_else(|| Error::arg(format!("disorder has no couplings for p = {p}")))?;
        let scale = (n as f64).powf(-(p as f64 - 1.0) / 2.0);
        for (k, &b) in beta.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let blocks: Vec<&[f64]> = (0..p).map(|_| columns[k].as_slice()).collect();
            total += b * scale * contract(g, &blocks);
        }
    }
    Ok(total)
}

/// `Σ_i ⟨h, σ_i⟩`.
pub fn field_energy(model: &MixedModel, config: &SpinConfig) -> f64 {
    let h = model.external_field();
    (0..config.n())
        .map(|i| {
            config
                .site(i)
                .iter()
                .zip(h)
                .map(|(s, h)| s * h)
                .sum::<f64>()
        })
        .sum()
}

/// Empirical covariance against its closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub empirical: f64,
    pub std_error: f64,
    pub expected: f64,
    pub draws: usize,
}

impl CovarianceCheck {
    /// `|empirical - expected| ≤ k` standard errors (plus round-off slack).
    pub fn within(&self, k: f64) -> bool {
        (self.empirical - self.expected).abs() <= k * self.std_error + 1e-12
    }
}

/// `E H_N(σ¹) H_N(σ²) / N` over `draws` disorder samples against
/// `Sum(ξ(R(σ¹, σ²)))`. The deterministic field part is removed first, so the
/// product mean is the covariance.
pub fn hamiltonian_covariance_check(
    model: &MixedModel,
    a: &SpinConfig,
    b: &SpinConfig,
    draws: usize,
    seed: u64,
) -> Result<CovarianceCheck> {
    if draws < 2 {
        return Err(Error::arg("at least two draws are needed"));
    }
    let n = a.n();
    let r = overlap(a, b)?;
    let expected = model.hamiltonian_covariance(&r)?;
    let products: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let d = Disorder::sample(model, n, seed, i as u64)?;
            let ha = hamiltonian(model, a, &d)? - field_energy(model, a);
            let hb = hamiltonian(model, b, &d)? - field_energy(model, b);
            Ok(ha * hb / n as f64)
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
