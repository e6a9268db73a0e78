//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on κ×κ matrices with κ in the single digits, so the
//! routines favour clarity and determinism over speed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Tolerance on negative eigenvalues before a matrix stops counting as PSD.
pub const PSD_TOL: f64 = 1e-10;
/// Absolute tolerance on `|A - A^T|` entries for a matrix to count as symmetric.
pub const SYM_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order. Ties keep the solver's original index order.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: Mat,
}

impl SortedEigen {
    pub fn new(m: &Mat) -> Self {
        let n = m.nrows();
        let eig = SymmetricEigen::new(symmetrized(m));
        let mut order: Vec<usize> = (0..n).collect();
        // stable sort: ties broken by original index
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = Mat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        SortedEigen { values, vectors }
    }

    /// `V diag(f(values)) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        symmetrized(&(scaled * self.vectors.transpose()))
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// `(m + m^T) / 2`.
pub fn symmetrized(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrized(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `max_{i,j} |m_ij|`.
pub fn sup_norm(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `Σ_{i,j} |m_ij|`.
pub fn l1_norm(m: &Mat) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

pub fn ensure_square(m: &Mat, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::shape(
            format!("{n}x{n}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Clips eigenvalues in `[-tol, 0)` to zero. Anything more negative is
/// reported as [`Error::NotPsd`].
pub fn psd_repair(m: &Mat, tol: f64) -> Result<Mat> {
    let eig = SortedEigen::new(m);
    let min = eig.min();
    if min < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    if min >= 0.0 {
        return Ok(symmetrized(m));
    }
    Ok(eig.map(|v| v.max(0.0)))
}

/// A factor `L` (κ×rank) with `L L^T = m` for a PSD matrix, dropping the
/// directions whose eigenvalue is at or below `drop_below`.
pub fn psd_factor(m: &Mat, drop_below: f64) -> Result<Mat> {
    let eig = SortedEigen::new(m);
    if eig.min() < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min(),
        });
    }
    let scale = eig.values.first().copied().unwrap_or(0.0).max(1.0);
    let rank = eig
        .values
        .iter()
        .take_while(|&&v| v > drop_below * scale)
        .count();
    let n = m.nrows();
    let mut factor = Mat::zeros(n, rank);
    for j in 0..rank {
        let s = eig.values[j].sqrt();
        for i in 0..n {
            factor[(i, j)] = eig.vectors[(i, j)] * s;
        }
    }
    Ok(factor)
}

/// κ×κ symmetric positive-semidefinite matrix: overlaps, constraints and path
/// values. Symmetry holds to [`SYM_TOL`] and eigenvalues are `≥ -PSD_TOL`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct GramMatrix(Mat);

impl GramMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        Self::with_tolerance(m, PSD_TOL)
    }

    pub fn with_tolerance(m: Mat, psd_tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::shape(
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("matrix has non-finite entries"));
        }
        let asym = max_asymmetry(&m);
        if asym > SYM_TOL {
            return Err(Error::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        let min = min_eigenvalue(&m);
        if min < -psd_tol {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(GramMatrix(symmetrized(&m)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(mat_from_rows(rows)?)
    }

    pub fn zeros(kappa: usize) -> Self {
        GramMatrix(Mat::zeros(kappa, kappa))
    }

    pub fn identity(kappa: usize) -> Self {
        GramMatrix(Mat::identity(kappa, kappa))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn kappa(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// `true` when `other - self` is PSD within `tol`.
    pub fn le_psd(&self, other: &GramMatrix, tol: f64) -> bool {
        min_eigenvalue(&(&other.0 - &self.0)) >= -tol
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        mat_to_rows(&self.0)
    }
}

impl std::ops::Deref for GramMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for GramMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        GramMatrix::from_rows(&rows)
    }
}

impl From<GramMatrix> for Vec<Vec<f64>> {
    fn from(g: GramMatrix) -> Self {
        g.to_rows()
    }
}

/// Row-major nested lists into a matrix; all rows must have equal length.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::shape("rows of equal length", "ragged rows"));
    }
    Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
