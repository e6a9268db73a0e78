use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sup_norm, GramMatrix};
use crate::mixing::MixedModel;
use crate::prior::{overlap, SpinConfig, SpinPrior};
use crate::stats::MeanSe;

use super::hamiltonian::{hamiltonian, Disorder};

/// Largest number of configurations enumerated exactly.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

/// Number of configurations `|supp μ|^N`, or a budget error.
pub fn configuration_count(prior: &SpinPrior, n: usize) -> Result<u64> {
    if n == 0 {
        return Err(Error::arg("N must be positive"));
    }
    let count = (prior.len() as u64).checked_pow(n as u32);
    match count {
        Some(c) if c <= ENUMERATION_BUDGET => Ok(c),
        _ => Err(Error::Budget(format!(
            "{}^{n} configurations exceed the exact-enumeration budget of {ENUMERATION_BUDGET}; \
             reduce N or estimate the free energy by Monte Carlo over configurations",
            prior.len()
        ))),
    }
}

/// Visits every configuration in lexicographic order of atom indices (site 0
/// slowest) with its log prior weight `Σ_i log w(σ_i)`.
pub(crate) fn for_each_config(
    prior: &SpinPrior,
    n: usize,
    mut visit: impl FnMut(&SpinConfig, f64) -> Result<()>,
) -> Result<()> {
    let total = configuration_count(prior, n)?;
    let atoms = prior.atoms();
    let kappa = prior.kappa();
    let log_w: Vec<f64> = atoms.iter().map(|a| a.weight.ln()).collect();
    let mut digits = vec![0usize; n];
    let mut spins = vec![0.0; n * kappa];
    for _ in 0..total {
        for (i, &d) in digits.iter().enumerate() {
            spins[i * kappa..(i + 1) * kappa].copy_from_slice(&atoms[d].point);
        }
        let config = SpinConfig::new(kappa, spins.clone())?;
        let lw: f64 = digits.iter().map(|&d| log_w[d]).sum();
        visit(&config, lw)?;
        for slot in digits.iter_mut().rev() {
            *slot += 1;
            if *slot < atoms.len() {
                break;
            }
            *slot = 0;
        }
    }
    Ok(())
}

/// Running `log Σ exp(v)` without storing the terms.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub(crate) fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Disorder average of a finite-`N` free energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub std_error: f64,
    /// One value per disorder draw, in draw order.
    pub per_draw: Vec<f64>,
    pub n_sites: usize,
    pub configurations: u64,
    /// Prior probability of the configurations that were summed over.
    pub hit_fraction: f64,
}

fn estimate(
    per_draw: Vec<f64>,
    n_sites: usize,
    configurations: u64,
    hit_fraction: f64,
) -> FreeEnergyEstimate {
    let m = MeanSe::of(&per_draw);
    FreeEnergyEstimate {
        value: m.mean,
        std_error: m.std_error,
        per_draw,
        n_sites,
        configurations,
        hit_fraction,
    }
}

fn check_shapes(model: &MixedModel, prior: &SpinPrior, draws: usize) -> Result<()> {
    if model.kappa() != prior.kappa() {
        return Err(Error::shape(
            format!("prior of dimension {}", model.kappa()),
            prior.kappa(),
        ));
    }
    if draws == 0 {
        return Err(Error::arg("at least one disorder draw is needed"));
    }
    Ok(())
}

/// `E (1/N) log ∫ exp H_N(σ) dμ^{⊗N}(σ)` by exact enumeration, averaged over
/// `draws` disorder samples. The prior's total mass enters through `log m`.
pub fn exact_free_energy(
    model: &MixedModel,
    prior: &SpinPrior,
    n: usize,
    draws: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    check_shapes(model, prior, draws)?;
    let configurations = configuration_count(prior, n)?;
    let per_draw: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let disorder = Disorder::sample(model, n, seed, i as u64)?;
            let mut acc = LogSumExp::new();
            for_each_config(prior, n, |c, lw| {
                acc.push(lw + hamiltonian(model, c, &disorder)?);
                Ok(())
            })?;
            Ok(acc.value() / n as f64 + prior.log_mass())
        })
        .collect::<Result<_>>()?;
    Ok(estimate(per_draw, n, configurations, 1.0))
}

/// `‖R(σ, σ) - D‖_∞ < ε`.
pub fn in_constraint_set(config: &SpinConfig, d: &GramMatrix, epsilon: f64) -> Result<bool> {
    let r = overlap(config, config)?;
    Ok(sup_norm(&(r - d.as_matrix())) < epsilon)
}

/// Free energy restricted to `{σ : ‖R(σ, σ) - D‖_∞ < ε}`.
pub fn constrained_free_energy(
    model: &MixedModel,
    prior: &SpinPrior,
    n: usize,
    d: &GramMatrix,
    epsilon: f64,
    draws: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    check_shapes(model, prior, draws)?;
    if d.kappa() != model.kappa() {
        return Err(Error::shape(model.kappa(), d.kappa()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon = {epsilon} must be positive")));
    }
    let configurations = configuration_count(prior, n)?;
    let mut hits = Vec::new();
    let mut hit_mass = LogSumExp::new();
    for_each_config(prior, n, |c, lw| {
        if in_constraint_set(c, d, epsilon)? {
            hits.push((c.clone(), lw));
            hit_mass.push(lw);
        }
        Ok(())
    })?;
    if hits.is_empty() {
        return Err(Error::Infeasible(format!(
            "no configuration with N = {n} has ||R - D||_inf < eps = {epsilon} for D = {:?}",
            crate::linalg::mat_to_rows(d.as_matrix())
        )));
    }
    let per_draw: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let disorder = Disorder::sample(model, n, seed, i as u64)?;
            let mut acc = LogSumExp::new();
            for (c, lw) in &hits {
                acc.push(lw + hamiltonian(model, c, &disorder)?);
            }
            Ok(acc.value() / n as f64 + prior.log_mass())
        })
        .collect::<Result<_>>()?;
    Ok(estimate(
        per_draw,
        n,
        configurations,
        hit_mass.value().exp(),
    ))
}
