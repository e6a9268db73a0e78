//! Mixed-model coefficients and the mixing functions `ξ`, `ξ'`, `θ`.
//!
//! For coordinates `k, k'` the mixing function is
//! `ξ_{k,k'}(x) = Σ_p β_p(k) β_p(k') x^p` and `θ = x ξ' - ξ`. Matrix forms
//! apply these entrywise; for Gram matrices they can equivalently be written
//! with Hadamard powers, which is how [`MixedModel::xi_prime_hadamard`] and
//! [`MixedModel::theta_hadamard`] compute them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_square, Mat};

/// Inverse-temperature table `β_p(k)` of a mixed even p-spin model with
/// κ-dimensional spins, plus an optional per-coordinate external field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModel {
    kappa: usize,
    coefficients: BTreeMap<u32, Vec<f64>>,
    external_field: Vec<f64>,
}

impl MixedModel {
    /// Builds a model from `(p, β_p)` pairs. Every `p` must be even and
    /// `≥ 2`, every `β_p` of length κ with non-negative finite entries.
    pub fn new(kappa: usize, terms: impl IntoIterator<Item = (u32, Vec<f64>)>) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::InvalidModel("kappa must be positive".into()));
        }
        let mut coefficients = BTreeMap::new();
        for (p, beta) in terms {
            if p < 2 || p % 2 != 0 {
                return Err(Error::InvalidModel(format!(
                    "p = {p}: only even p >= 2 are supported"
                )));
            }
            if beta.len() != kappa {
                return Err(Error::InvalidModel(format!(
                    "beta_{p} has length {}, expected kappa = {kappa}",
                    beta.len()
                )));
            }
            if let Some(b) = beta.iter().find(|b| !b.is_finite() || **b < 0.0) {
                return Err(Error::InvalidModel(format!(
                    "beta_{p} has entry {b}; entries must be finite and non-negative"
                )));
            }
            if coefficients.insert(p, beta).is_some() {
                return Err(Error::InvalidModel(format!("beta_{p} given twice")));
            }
        }
        Ok(MixedModel {
            kappa,
            coefficients,
            external_field: vec![0.0; kappa],
        })
    }

    /// Vector-spin Sherrington–Kirkpatrick model: `β_2(k) = β` for all `k`.
    pub fn sk(kappa: usize, beta: f64) -> Result<Self> {
        Self::new(kappa, [(2, vec![beta; kappa])])
    }

    /// Model with no interactions at all.
    pub fn free(kappa: usize) -> Result<Self> {
        Self::new(kappa, [])
    }

    pub fn with_external_field(mut self, field: Vec<f64>) -> Result<Self> {
        if field.len() != self.kappa {
            return Err(Error::InvalidModel(format!(
                "external field has length {}, expected {}",
                field.len(),
                self.kappa
            )));
        }
        if field.iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidModel("external field must be finite".into()));
        }
        self.external_field = field;
        Ok(self)
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn external_field(&self) -> &[f64] {
        &self.external_field
    }

    pub fn has_external_field(&self) -> bool {
        self.external_field.iter().any(|&h| h != 0.0)
    }

    /// `(p, β_p)` pairs in increasing `p`, including all-zero rows.
    pub fn terms(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.coefficients.iter().map(|(&p, b)| (p, b.as_slice()))
    }

    /// Largest `p` with a nonzero coefficient, or `None` for a free model.
    pub fn p_max(&self) -> Option<u32> {
        self.terms()
            .filter(|(_, b)| b.iter().any(|&v| v != 0.0))
            .map(|(p, _)| p)
            .last()
    }

    pub fn is_free(&self) -> bool {
        self.p_max().is_none()
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.kappa {
            return Err(Error::IndexOutOfRange {
                index: k,
                kappa: self.kappa,
            });
        }
        Ok(())
    }

    /// `ξ_{k,k'}(x)` with zero-based coordinate indices.
    pub fn xi(&self, k: usize, k2: usize, x: f64) -> Result<f64> {
        self.check_index(k)?;
        self.check_index(k2)?;
        Ok(self.xi_unchecked(k, k2, x))
    }

    pub fn xi_prime(&self, k: usize, k2: usize, x: f64) -> Result<f64> {
        self.check_index(k)?;
        self.check_index(k2)?;
        Ok(self.xi_prime_unchecked(k, k2, x))
    }

    /// `θ_{k,k'}(x) = Σ_p β_p(k) β_p(k') (p-1) x^p`.
    pub fn theta(&self, k: usize, k2: usize, x: f64) -> Result<f64> {
        self.check_index(k)?;
        self.check_index(k2)?;
        Ok(self.theta_unchecked(k, k2, x))
    }

    fn xi_unchecked(&self, k: usize, k2: usize, x: f64) -> f64 {
        self.terms()
            .map(|(p, b)| b[k] * b[k2] * x.powi(p as i32))
            .sum()
    }

    fn xi_prime_unchecked(&self, k: usize, k2: usize, x: f64) -> f64 {
        self.terms()
            .map(|(p, b)| b[k] * b[k2] * p as f64 * x.powi(p as i32 - 1))
            .sum()
    }

    fn theta_unchecked(&self, k: usize, k2: usize, x: f64) -> f64 {
        self.terms()
            .map(|(p, b)| b[k] * b[k2] * (p as f64 - 1.0) * x.powi(p as i32))
            .sum()
    }

    fn entrywise(&self, a: &Mat, f: impl Fn(usize, usize, f64) -> f64) -> Result<Mat> {
        ensure_square(a, self.kappa)?;
        Ok(Mat::from_fn(self.kappa, self.kappa, |i, j| {
            f(i, j, a[(i, j)])
        }))
    }

    /// `ξ(A)` entrywise. `A` need not be symmetric or PSD.
    pub fn xi_matrix(&self, a: &Mat) -> Result<Mat> {
        self.entrywise(a, |i, j, v| self.xi_unchecked(i, j, v))
    }

    pub fn xi_prime_matrix(&self, a: &Mat) -> Result<Mat> {
        self.entrywise(a, |i, j, v| self.xi_prime_unchecked(i, j, v))
    }

    pub fn theta_matrix(&self, a: &Mat) -> Result<Mat> {
        self.entrywise(a, |i, j, v| self.theta_unchecked(i, j, v))
    }

    /// `ξ'(γ) = Σ_p p γ^{∘(p-1)} ∘ (β_p β_p^T)`.
    pub fn xi_prime_hadamard(&self, gamma: &Mat) -> Result<Mat> {
        ensure_square(gamma, self.kappa)?;
        let mut out = Mat::zeros(self.kappa, self.kappa);
        for (p, b) in self.terms() {
            let outer = beta_outer(b);
            let power = hadamard_power(gamma, p - 1);
            out += power.component_mul(&outer) * p as f64;
        }
        Ok(out)
    }

    /// `θ(γ) = Σ_p (p-1) γ^{∘p} ∘ (β_p β_p^T)`.
    pub fn theta_hadamard(&self, gamma: &Mat) -> Result<Mat> {
        ensure_square(gamma, self.kappa)?;
        let mut out = Mat::zeros(self.kappa, self.kappa);
        for (p, b) in self.terms() {
            let outer = beta_outer(b);
            let power = hadamard_power(gamma, p);
            out += power.component_mul(&outer) * (p as f64 - 1.0);
        }
        Ok(out)
    }

    /// `Sum(ξ(R))`: the covariance `E H_N(σ¹) H_N(σ²) / N` for overlap `R`.
    pub fn hamiltonian_covariance(&self, r: &Mat) -> Result<f64> {
        Ok(sum_all(&self.xi_matrix(r)?))
    }

    /// Coefficients above the sufficient bound `(2c)^{-p}` for support in
    /// `[-c, c]^κ`. Advisory only.
    pub fn coefficient_warnings(&self, support_bound: f64) -> Vec<String> {
        let mut out = Vec::new();
        if support_bound <= 0.0 {
            return out;
        }
        for (p, b) in self.terms() {
            let limit = (2.0 * support_bound).powi(-(p as i32));
            for (k, &v) in b.iter().enumerate() {
                if v > limit {
                    out.push(format!(
                        "beta_{p}({k}) = {v} exceeds (2c)^-p = {limit:.6} for c = {support_bound}"
                    ));
                }
            }
        }
        out
    }
}

fn beta_outer(b: &[f64]) -> Mat {
    Mat::from_fn(b.len(), b.len(), |i, j| b[i] * b[j])
}

fn hadamard_power(a: &Mat, p: u32) -> Mat {
    a.map(|v| v.powi(p as i32))
}

/// Sum of all entries of a matrix.
pub fn sum_all(a: &Mat) -> f64 {
    a.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sk_half() -> MixedModel {
        MixedModel::sk(1, 0.5).unwrap()
    }

    #[test]
    fn xi_scalar_examples() {
        assert!((sk_half().xi(0, 0, 0.6).unwrap() - 0.09).abs() < 1e-15);
        let mixed = MixedModel::new(1, [(2, vec![0.5]), (4, vec![0.1])]).unwrap();
        assert_eq!(mixed.xi(0, 0, 0.0).unwrap(), 0.0);
        assert!((mixed.xi(0, 0, 1.0).unwrap() - 0.26).abs() < 1e-15);
    }

    #[test]
    fn theta_scalar_examples() {
        assert!((sk_half().theta(0, 0, 0.6).unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(sk_half().theta(0, 0, 0.0).unwrap(), 0.0);
        let quartic = MixedModel::new(1, [(4, vec![0.1])]).unwrap();
        assert!((quartic.theta(0, 0, 1.0).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn index_errors() {
        let m = MixedModel::sk(2, 0.3).unwrap();
        assert_eq!(
            m.xi(2, 0, 0.1),
            Err(Error::IndexOutOfRange { index: 2, kappa: 2 })
        );
        assert!(m.theta(0, 5, 0.1).is_err());
    }

    #[test]
    fn rejects_odd_and_negative_coefficients() {
        assert!(MixedModel::new(1, [(3, vec![0.1])]).is_err());
        assert!(MixedModel::new(1, [(2, vec![-0.1])]).is_err());
        assert!(MixedModel::new(2, [(2, vec![0.1])]).is_err());
        assert!(MixedModel::new(1, [(2, vec![0.1]), (2, vec![0.2])]).is_err());
        assert!(MixedModel::new(0, []).is_err());
    }

    #[test]
    fn p_max_ignores_zero_rows() {
        let m = MixedModel::new(1, [(2, vec![0.5]), (6, vec![0.0])]).unwrap();
        assert_eq!(m.p_max(), Some(2));
        assert!(MixedModel::free(2).unwrap().is_free());
    }

    #[test]
    fn matrix_examples() {
        let m = MixedModel::new(2, [(2, vec![1.0, 0.5])]).unwrap();
        let gamma = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let expected = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 0.5]);
        assert!((m.xi_prime_matrix(&gamma).unwrap() - &expected).abs().max() < 1e-15);
        assert!(
            (m.xi_prime_hadamard(&gamma).unwrap() - &expected)
                .abs()
                .max()
                < 1e-15
        );
        assert_eq!(
            m.xi_prime_matrix(&Mat::zeros(2, 2)).unwrap(),
            Mat::zeros(2, 2)
        );

        let scalar = sk_half();
        let g = Mat::from_element(1, 1, 0.8);
        assert!((scalar.xi_prime_matrix(&g).unwrap()[(0, 0)] - 0.4).abs() < 1e-15);
        assert!((scalar.theta_matrix(&g).unwrap()[(0, 0)] - 0.16).abs() < 1e-15);
        assert!(scalar.xi_matrix(&Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn sum_all_examples() {
        assert_eq!(sum_all(&Mat::identity(2, 2)), 2.0);
        assert_eq!(sum_all(&Mat::from_element(3, 3, 1.0)), 9.0);
        assert_eq!(
            sum_all(&Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 0.5])),
            3.5
        );
    }

    #[test]
    fn hamiltonian_covariance_examples() {
        let one = Mat::from_element(1, 1, 1.0);
        assert!((sk_half().hamiltonian_covariance(&one).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(
            sk_half().hamiltonian_covariance(&Mat::zeros(1, 1)).unwrap(),
            0.0
        );
    }

    #[test]
    fn coefficient_warning_threshold() {
        // c = 1: the bound for p = 2 is 1/4
        assert_eq!(
            MixedModel::sk(1, 0.3)
                .unwrap()
                .coefficient_warnings(1.0)
                .len(),
            1
        );
        assert!(MixedModel::sk(1, 0.2)
            .unwrap()
            .coefficient_warnings(1.0)
            .is_empty());
    }

    #[test]
    fn external_field_validation() {
        let m = MixedModel::sk(2, 0.3).unwrap();
        assert!(m.clone().with_external_field(vec![0.1]).is_err());
        let m = m.with_external_field(vec![0.1, 0.0]).unwrap();
        assert!(m.has_external_field());
    }
}
