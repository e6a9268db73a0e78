//! Gauss–Hermite rules and tensor grids for Gaussian expectations.
//!
//! Nodes are computed by Newton iteration on the orthonormal Hermite
//! recurrence. A rule for `E f(z)`, `z ~ N(0, Σ)`, is obtained by tensorising
//! the standard-normal rule over the columns of a factor `L` with
//! `L L^T = Σ`.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// One-dimensional rule for `E f(ξ)`, `ξ ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardNormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Physicists' Gauss–Hermite nodes and weights for weight `exp(-x^2)`,
/// sorted ascending.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::arg("Gauss-Hermite rule needs at least one node"));
    }
    if n > 200 {
        return Err(Error::arg(
            "Gauss-Hermite rules above 200 nodes are not supported",
        ));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "Gauss-Hermite Newton iteration did not converge for n = {n}"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    Ok((x, w))
}

impl StandardNormalRule {
    pub fn new(n: usize) -> Result<Self> {
        let (x, w) = gauss_hermite(n)?;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        Ok(StandardNormalRule {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / sqrt_pi).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor rule for a κ-dimensional centred Gaussian with covariance `L L^T`.
/// `points` is row-major: point `i` occupies `points[i*κ .. (i+1)*κ]`.
#[derive(Debug, Clone)]
pub struct GaussianGrid {
    pub kappa: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianGrid {
    /// Number of grid points `rule.len()^rank(L)`; used for budget checks
    /// before building anything.
    pub fn size(rule_len: usize, rank: usize) -> Option<usize> {
        rule_len.checked_pow(rank as u32)
    }

    pub fn new(factor: &Mat, rule: &StandardNormalRule) -> Result<Self> {
        let kappa = factor.nrows();
        let rank = factor.ncols();
        let total = Self::size(rule.len(), rank)
            .ok_or_else(|| Error::Budget("quadrature grid size overflows".into()))?;
        let mut points = Vec::with_capacity(total * kappa);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            let w: f64 = idx.iter().map(|&i| rule.weights[i]).product();
            for k in 0..kappa {
                let mut z = 0.0;
                for (d, &i) in idx.iter().enumerate() {
                    z += factor[(k, d)] * rule.nodes[i];
                }
                points.push(z);
            }
            weights.push(w);
            // odometer, last dimension fastest
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < rule.len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(GaussianGrid {
            kappa,
            points,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.kappa..(i + 1) * self.kappa]
    }
}
