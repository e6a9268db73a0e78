use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{GramMatrix, Mat};
use crate::mixing::MixedModel;
use crate::prior::{build_modifier, overlap, SpinConfig, SpinPrior};
use crate::stats::MeanSe;

use super::free_energy::{for_each_config, in_constraint_set, ENUMERATION_BUDGET};
use super::hamiltonian::{hamiltonian, Disorder};
use super::perturbation::{PerturbationSpec, Theta};

/// Size and sampling parameters of a Ghirlanda–Guerra check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GgSpec {
    pub n_sites: usize,
    pub d: GramMatrix,
    pub epsilon: f64,
    /// Number `n` of replicas `f` depends on.
    pub replicas: usize,
    pub disorder_draws: usize,
    pub u_samples: usize,
    pub seed: u64,
}

/// The modified overlaps `R̃_{ℓℓ'}` of `n` replicas, `0 ≤ ℓ, ℓ' < n`.
pub struct ReplicaOverlaps<'a> {
    n: usize,
    mats: Vec<&'a Mat>,
}

impl ReplicaOverlaps<'_> {
    pub fn replicas(&self) -> usize {
        self.n
    }

    pub fn get(&self, l: usize, l2: usize) -> &Mat {
        self.mats[l * self.n + l2]
    }
}

pub type OverlapFunctional<'f> = &'f (dyn Fn(&ReplicaOverlaps) -> f64 + Sync);

/// Disorder averages entering `Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GgTerms {
    /// `E⟨f C̃_{1,n+1}⟩`
    pub f_c_new: f64,
    /// `E⟨f⟩`
    pub f: f64,
    /// `E⟨C̃_{12}⟩`
    pub c: f64,
    /// `Σ_{ℓ=2}^n E⟨f C̃_{1ℓ}⟩`
    pub f_c_old: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GgEstimate {
    /// `E_u Δ(f, n, θ)`
    pub value: f64,
    pub std_error: f64,
    /// `Δ` for each sampled `u`.
    pub per_u: Vec<f64>,
    pub per_u_std_error: Vec<f64>,
    /// Terms averaged over all draws and all `u`.
    pub terms: GgTerms,
    /// Configurations in the constraint set.
    pub configurations: usize,
    pub strength: f64,
}

/// `E_u |E⟨f C̃_{1,n+1}⟩ - (1/n) E⟨f⟩ E⟨C̃_{12}⟩ - (1/n) Σ_{ℓ=2}^n E⟨f C̃_{1ℓ}⟩|`
/// under the Gibbs measure on `{‖R(σ,σ) - D‖_∞ < ε}` with Hamiltonian
/// `H_N(σ) + s_N h_N(σ̃)`, `σ̃ = A(R(σ,σ)) σ` and `C̃_{ℓℓ'} = C_θ(R̃_{ℓℓ'})`.
///
/// Replica averages are computed exactly by enumerating the constraint set;
/// the outer expectations are averages over disorder draws, and the `u`
/// expectation over `u_samples` draws of `u`.
pub fn gg_discrepancy(
    model: &MixedModel,
    prior: &SpinPrior,
    perturbation: &PerturbationSpec,
    spec: &GgSpec,
    f: OverlapFunctional,
    theta: &Theta,
) -> Result<GgEstimate> {
    let kappa = model.kappa();
    if prior.kappa() != kappa || spec.d.kappa() != kappa || theta.kappa() != kappa {
        return Err(Error::shape(
            format!("kappa = {kappa} everywhere"),
            "mixed dimensions",
        ));
    }
    if !perturbation.is_empty() {
        perturbation.validate()?;
        if perturbation.thetas[0].kappa() != kappa {
            return Err(Error::shape(kappa, perturbation.thetas[0].kappa()));
        }
    }
    if spec.replicas == 0 || spec.disorder_draws < 2 || spec.u_samples == 0 {
        return Err(Error::arg(
            "need replicas >= 1, disorder_draws >= 2 and u_samples >= 1",
        ));
    }
    let n = spec.n_sites;

    let mut configs: Vec<(SpinConfig, SpinConfig, f64)> = Vec::new();
    for_each_config(prior, n, |c, lw| {
        if in_constraint_set(c, &spec.d, spec.epsilon)? {
            let m = build_modifier(&overlap(c, c)?, &spec.d, spec.epsilon)?;
            configs.push((c.clone(), c.transformed(&m.a), lw));
        }
        Ok(())
    })?;
    let k = configs.len();
    if k == 0 {
        return Err(Error::Infeasible(format!(
            "no configuration with N = {n} has ||R - D||_inf < eps = {}",
            spec.epsilon
        )));
    }
    let tuples = (k as u64)
        .checked_pow(spec.replicas as u32)
        .filter(|&t| t <= ENUMERATION_BUDGET)
        .ok_or_else(|| {
            Error::Budget(format!(
                "{k}^{} replica tuples exceed the budget of {ENUMERATION_BUDGET}",
                spec.replicas
            ))
        })? as usize;

    let mut r_tilde = Vec::with_capacity(k * k);
    for a in &configs {
        for b in &configs {
            r_tilde.push(overlap(&a.1, &b.1)?);
        }
    }
    let c_tab: Vec<f64> = r_tilde
        .iter()
        .map(|r| theta.covariance(r))
        .collect::<Result<_>>()?;

    let nr = spec.replicas;
    let mut f_tab = Vec::with_capacity(tuples);
    let mut digits = vec![0usize; nr];
    for _ in 0..tuples {
        let mats = (0..nr * nr)
            .map(|e| &r_tilde[digits[e / nr] * k + digits[e % nr]])
            .collect();
        let v = f(&ReplicaOverlaps { n: nr, mats });
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "f is not finite at tuple {digits:?}"
            )));
        }
        f_tab.push(v);
        advance(&mut digits, k);
    }

    let support = configs
        .iter()
        .flat_map(|c| c.1.raw().iter())
        .fold(prior.support_bound(), |m, v| m.max(v.abs()));
    let weights = perturbation.weights(support);
    let strength = perturbation.strength(n);

    let mut per_u = Vec::with_capacity(spec.u_samples);
    let mut per_u_se = Vec::with_capacity(spec.u_samples);
    let mut sums = [0.0; 4];
    for ui in 0..spec.u_samples {
        let u = perturbation.sample_u(spec.seed, ui as u64);
        let rows: Vec<[f64; 4]> = (0..spec.disorder_draws)
            .into_par_iter()
            .map(|di| {
                let index = (ui * spec.disorder_draws + di) as u64;
                let disorder = Disorder::sample(model, n, spec.seed, index)?;
                let couplings = if perturbation.is_empty() {
                    Vec::new()
                } else {
                    perturbation.sample_couplings(n, spec.seed, index)?
                };
                let mut energy = Vec::with_capacity(k);
                for (c, ct, lw) in &configs {
                    let mut e = lw + hamiltonian(model, c, &disorder)?;
                    if !perturbation.is_empty() {
                        e += strength * perturbation.h(ct, &couplings, &u, &weights)?;
                    }
                    energy.push(e);
                }
                Ok(replica_terms(&energy, &c_tab, &f_tab, nr))
            })
            .collect::<Result<_>>()?;
        let col = |j: usize| MeanSe::of(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()).mean;
        let m = [col(0), col(1), col(2), col(3)];
        let inv = 1.0 / nr as f64;
        let delta = m[0] - inv * m[1] * m[2] - inv * m[3];
        let linear: Vec<f64> = rows
            .iter()
            .map(|r| r[0] - inv * (m[2] * r[1] + m[1] * r[2]) - inv * r[3])
            .collect();
        per_u.push(delta.abs());
        per_u_se.push(MeanSe::of(&linear).std_error);
        for (s, v) in sums.iter_mut().zip(m) {
            *s += v / spec.u_samples as f64;
        }
    }
    let value = per_u.iter().sum::<f64>() / spec.u_samples as f64;
    let std_error = per_u_se.iter().map(|s| s * s).sum::<f64>().sqrt() / spec.u_samples as f64;
    Ok(GgEstimate {
        value,
        std_error,
        per_u,
        per_u_std_error: per_u_se,
        terms: GgTerms {
            f_c_new: sums[0],
            f: sums[1],
            c: sums[2],
            f_c_old: sums[3],
        },
        configurations: k,
        strength,
    })
}

fn advance(digits: &mut [usize], base: usize) {
    for slot in digits.iter_mut().rev() {
        *slot += 1;
        if *slot < base {
            return;
        }
        *slot = 0;
    }
}

/// Exact Gibbs averages `⟨f C̃_{1,n+1}⟩, ⟨f⟩, ⟨C̃_{12}⟩, Σ_ℓ ⟨f C̃_{1ℓ}⟩`
/// for one disorder draw.
fn replica_terms(energy: &[f64], c_tab: &[f64], f_tab: &[f64], nr: usize) -> [f64; 4] {
    let k = energy.len();
    let top = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut g: Vec<f64> = energy.iter().map(|e| (e - top).exp()).collect();
    let z: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= z);

    let c_bar: Vec<f64> = (0..k)
        .map(|a| (0..k).map(|b| g[b] * c_tab[a * k + b]).sum())
        .collect();
    let c12: f64 = (0..k).map(|a| g[a] * c_bar[a]).sum();

    let mut digits = vec![0usize; nr];
    let (mut t_new, mut t_f, mut t_old) = (0.0, 0.0, 0.0);
    for &fv in f_tab {
        let w: f64 = digits.iter().map(|&a| g[a]).product();
        let wf = w * fv;
        t_f += wf;
        t_new += wf * c_bar[digits[0]];
        t_old += wf
            * digits[1..]
                .iter()
                .map(|&a| c_tab[digits[0] * k + a])
                .sum::<f64>();
        advance(&mut digits, k);
    }
    [t_new, t_f, c12, t_old]
}
