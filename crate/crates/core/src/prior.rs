//! Spin prior, overlaps, the constraint hull and the spin-modification matrix.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_to_rows, sup_norm, symmetrized, GramMatrix, Mat, SortedEigen, PSD_TOL};

/// One support point of the prior with its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Finitely supported spin prior `μ = mass · Σ_a w_a δ_{σ_a}`.
///
/// The atom weights form a probability vector (sum 1 within `1e-12`). The
/// separate `mass` lets the same prior stand for a counting measure: the
/// Ising prior with mass 2 is the counting measure on `{-1, +1}`, which shifts
/// every log-partition quantity by `log 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinPrior {
    kappa: usize,
    atoms: Vec<Atom>,
    mass: f64,
}

impl SpinPrior {
    /// Probability prior from `(point, weight)` pairs whose weights sum to 1.
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        Self::with_mass(atoms, 1.0)
    }

    pub fn with_mass(atoms: Vec<(Vec<f64>, f64)>, mass: f64) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidPrior("prior needs at least one atom".into()))?;
        let kappa = first.0.len();
        if kappa == 0 {
            return Err(Error::InvalidPrior("atoms must have dimension >= 1".into()));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidPrior(format!("mass {mass} must be positive")));
        }
        let mut total = 0.0;
        for (i, (p, w)) in atoms.iter().enumerate() {
            if p.len() != kappa {
                return Err(Error::InvalidPrior(format!(
                    "atom {i} has dimension {}, expected {kappa}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPrior(format!("atom {i} is not finite")));
            }
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidPrior(format!(
                    "atom {i} has weight {w}; weights must be positive"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPrior(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(SpinPrior {
            kappa,
            atoms: atoms
                .into_iter()
                .map(|(point, weight)| Atom { point, weight })
                .collect(),
            mass,
        })
    }

    /// Finite measure from arbitrary positive weights; the total becomes the
    /// mass and the weights are normalized.
    pub fn from_measure(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidPrior("total weight must be positive".into()));
        }
        let normalized = atoms.into_iter().map(|(p, w)| (p, w / total)).collect();
        Self::with_mass(normalized, total)
    }

    /// Uniform probability on `{-1, +1}`.
    pub fn ising() -> Self {
        Self::new(vec![(vec![1.0], 0.5), (vec![-1.0], 0.5)]).expect("valid prior")
    }

    /// Counting measure on `{-1, +1}` (mass 2).
    pub fn ising_counting() -> Self {
        Self::from_measure(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]).expect("valid prior")
    }

    /// Uniform probability on `{-1, +1}^κ`.
    pub fn hypercube(kappa: usize) -> Result<Self> {
        if kappa == 0 || kappa > 16 {
            return Err(Error::InvalidPrior(
                "hypercube needs 1 <= kappa <= 16".into(),
            ));
        }
        let n = 1usize << kappa;
        let atoms = (0..n)
            .map(|bits| {
                let p = (0..kappa)
                    .map(|k| {
                        if bits >> (kappa - 1 - k) & 1 == 1 {
                            -1.0
                        } else {
                            1.0
                        }
                    })
                    .collect();
                (p, 1.0 / n as f64)
            })
            .collect();
        Self::new(atoms)
    }

    /// Uniform probability on the standard basis of `R^κ` (Potts spins).
    pub fn potts(kappa: usize) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::InvalidPrior("kappa must be positive".into()));
        }
        let atoms = (0..kappa)
            .map(|k| {
                let mut p = vec![0.0; kappa];
                p[k] = 1.0;
                (p, 1.0 / kappa as f64)
            })
            .collect();
        Self::new(atoms)
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn log_mass(&self) -> f64 {
        self.mass.ln()
    }

    /// `c = max_a max_k |σ_a(k)|`.
    pub fn support_bound(&self) -> f64 {
        self.atoms
            .iter()
            .flat_map(|a| a.point.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn hull(&self) -> ConstraintHull {
        ConstraintHull {
            generators: self
                .atoms
                .iter()
                .map(|a| {
                    let v = nalgebra::DVector::from_column_slice(&a.point);
                    GramMatrix::new(&v * v.transpose()).expect("rank-one outer product is PSD")
                })
                .collect(),
        }
    }
}

/// A configuration of `N` vector spins, stored site-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfig {
    kappa: usize,
    spins: Vec<f64>,
}

impl SpinConfig {
    pub fn new(kappa: usize, spins: Vec<f64>) -> Result<Self> {
        if kappa == 0 || spins.is_empty() || spins.len() % kappa != 0 {
            return Err(Error::shape(
                format!("non-empty multiple of kappa = {kappa}"),
                spins.len(),
            ));
        }
        Ok(SpinConfig { kappa, spins })
    }

    pub fn from_sites(sites: &[Vec<f64>]) -> Result<Self> {
        let kappa = sites.first().map_or(0, Vec::len);
        if sites.iter().any(|s| s.len() != kappa) {
            return Err(Error::shape("sites of equal dimension", "ragged sites"));
        }
        Self::new(kappa, sites.concat())
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn n(&self) -> usize {
        self.spins.len() / self.kappa
    }

    pub fn site(&self, i: usize) -> &[f64] {
        &self.spins[i * self.kappa..(i + 1) * self.kappa]
    }

    pub fn raw(&self) -> &[f64] {
        &self.spins
    }

    /// Applies `σ_i ↦ A σ_i` at every site.
    pub fn transformed(&self, a: &Mat) -> SpinConfig {
        let k = self.kappa;
        let mut out = vec![0.0; self.spins.len()];
        for i in 0..self.n() {
            let s = self.site(i);
            for r in 0..k {
                out[i * k + r] = (0..k).map(|c| a[(r, c)] * s[c]).sum();
            }
        }
        SpinConfig {
            kappa: k,
            spins: out,
        }
    }
}

/// `R(a, b) = (1/N) Σ_i σ_i^a (σ_i^b)^T`; not symmetric in general.
pub fn overlap(a: &SpinConfig, b: &SpinConfig) -> Result<Mat> {
    if a.kappa != b.kappa || a.n() != b.n() {
        return Err(Error::shape(
            format!("{}x{}", a.n(), a.kappa),
            format!("{}x{}", b.n(), b.kappa),
        ));
    }
    let k = a.kappa;
    let n = a.n();
    let mut r = Mat::zeros(k, k);
    for i in 0..n {
        let (sa, sb) = (a.site(i), b.site(i));
        for x in 0..k {
            for y in 0..k {
                r[(x, y)] += sa[x] * sb[y];
            }
        }
    }
    Ok(r / n as f64)
}

/// `R(σ, σ)`, always symmetric PSD.
pub fn self_overlap(config: &SpinConfig) -> GramMatrix {
    let r = overlap(config, config).expect("same shape");
    GramMatrix::with_tolerance(symmetrized(&r), 1e-9).expect("self-overlap is PSD")
}

/// Convex hull of the rank-one matrices `σσ^T` over the prior's atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintHull {
    generators: Vec<GramMatrix>,
}

/// Result of a hull membership query.
#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    /// `D = Σ_j w_j G_j` within tolerance; `weights` is the certificate.
    Inside { weights: Vec<f64>, residual: f64 },
    /// No convex combination comes within tolerance. `entry` is the
    /// upper-triangular position with the largest residual at the best
    /// combination found.
    Outside {
        residual: f64,
        entry: (usize, usize),
    },
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside { .. })
    }
}

/// Default tolerance for [`ConstraintHull::membership`].
pub const HULL_TOL: f64 = 1e-8;

impl ConstraintHull {
    pub fn generators(&self) -> &[GramMatrix] {
        &self.generators
    }

    pub fn kappa(&self) -> usize {
        self.generators[0].kappa()
    }

    /// `Σ_j w_j G_j` for simplex weights `w`.
    pub fn point(&self, weights: &[f64]) -> Result<GramMatrix> {
        if weights.len() != self.generators.len() {
            return Err(Error::shape(self.generators.len(), weights.len()));
        }
        if weights.iter().any(|&w| w < -1e-12) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::arg("hull weights must lie on the simplex"));
        }
        let k = self.kappa();
        let mut d = Mat::zeros(k, k);
        for (g, &w) in self.generators.iter().zip(weights) {
            d += g.as_matrix() * w.max(0.0);
        }
        GramMatrix::new(d)
    }

    /// Solves `min t` subject to `|Σ_j w_j G_j - D| <= t` entrywise on the
    /// upper triangle, `w >= 0`, `Σ w = 1`, and reports membership when the
    /// optimal `t` is within `tol`.
    pub fn membership(&self, d: &GramMatrix, tol: f64) -> Result<Membership> {
        let k = self.kappa();
        if d.kappa() != k {
            return Err(Error::shape(k, d.kappa()));
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let w: Vec<_> = self
            .generators
            .iter()
            .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
            .collect();
        let t = lp.add_var(1.0, (0.0, f64::INFINITY));
        lp.add_constraint(
            w.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>().as_slice(),
            ComparisonOp::Eq,
            1.0,
        );
        for i in 0..k {
            for j in i..k {
                let mut upper: Vec<_> = w
                    .iter()
                    .zip(&self.generators)
                    .map(|(&v, g)| (v, g[(i, j)]))
                    .collect();
                let mut lower = upper.clone();
                upper.push((t, -1.0));
                lower.push((t, 1.0));
                lp.add_constraint(upper.as_slice(), ComparisonOp::Le, d[(i, j)]);
                lp.add_constraint(lower.as_slice(), ComparisonOp::Ge, d[(i, j)]);
            }
        }
        let solution = lp
            .solve()
            .map_err(|e| Error::Numerical(format!("hull LP: {e}")))?
            .into_solution()
            .map_err(|_| Error::Numerical("hull LP interrupted".into()))?;
        let weights: Vec<f64> = w.iter().map(|&v| solution.var_value(v).max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|v| v / total).collect();

        // Re-evaluate the residual from the certificate itself.
        let mut combo = Mat::zeros(k, k);
        for (g, &wj) in self.generators.iter().zip(&weights) {
            combo += g.as_matrix() * wj;
        }
        let diff = combo - d.as_matrix();
        let mut residual = 0.0_f64;
        let mut entry = (0, 0);
        for i in 0..k {
            for j in i..k {
                if diff[(i, j)].abs() > residual {
                    residual = diff[(i, j)].abs();
                    entry = (i, j);
                }
            }
        }
        Ok(if residual <= tol {
            Membership::Inside { weights, residual }
        } else {
            Membership::Outside { residual, entry }
        })
    }
}

/// Drops the eigenvalues of `D` below `√ε`: returns `D_ε = Q Λ_ε Q^T` and the
/// number `m` of kept eigenvalues.
pub fn truncate_constraint(d: &GramMatrix, epsilon: f64) -> Result<(GramMatrix, usize)> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon = {epsilon} must be positive")));
    }
    let eig = SortedEigen::new(d.as_matrix());
    if eig.min() < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min(),
        });
    }
    let threshold = epsilon.sqrt();
    let m = eig.values.iter().take_while(|&&v| v >= threshold).count();
    let truncated = truncate_with(&eig, m);
    Ok((GramMatrix::new(truncated)?, m))
}

fn truncate_with(eig: &SortedEigen, m: usize) -> Mat {
    let n = eig.values.len();
    let mut out = Mat::zeros(n, n);
    for j in 0..m {
        let v = eig.vectors.column(j);
        out += v * v.transpose() * eig.values[j];
    }
    symmetrized(&out)
}

/// The matrix `A(R)` with `A R A^T = D_ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModifierMatrix {
    #[serde(serialize_with = "ser_mat")]
    pub a: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub source_overlap: Mat,
    pub target: GramMatrix,
    pub epsilon: f64,
    /// Number of eigenvalues of `D` kept in `D_ε`.
    pub kept: usize,
    /// `tr((A - I) R (A - I)^T)`.
    pub distortion: f64,
}

fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    mat_to_rows(m).serialize(s)
}

/// Builds `A(R)` for `R ∈ B_ε(D)`.
///
/// In the eigenbasis `D = Q Λ Q^T` (eigenvalues decreasing), let `Q̂` be the
/// top-left `m×m` block of `Q^T R Q` and `Q̃ = Λ_m^{-1/2} Q̂ Λ_m^{-1/2}`. Then
/// `B = Λ_m^{1/2} Q̃^{-1/2} Λ_m^{-1/2}` satisfies `B Q̂ B^T = Λ_m`; `A` is `B`
/// padded with zeros and rotated back.
pub fn build_modifier(r: &Mat, d: &GramMatrix, epsilon: f64) -> Result<ModifierMatrix> {
    let k = d.kappa();
    crate::linalg::ensure_square(r, k)?;
    let r_gram = GramMatrix::new(r.clone())?;
    let gap = sup_norm(&(r - d.as_matrix()));
    if gap >= epsilon {
        return Err(Error::arg(format!(
            "overlap is outside B_eps(D): ||R - D||_inf = {gap} >= eps = {epsilon}"
        )));
    }
    let (target, m) = truncate_constraint(d, epsilon)?;
    let eig = SortedEigen::new(d.as_matrix());
    let q = &eig.vectors;
    let rotated = q.transpose() * r_gram.as_matrix() * q;

    let mut b_full = Mat::zeros(k, k);
    if m > 0 {
        let lam: Vec<f64> = eig.values[..m].to_vec();
        let q_hat = rotated.view((0, 0), (m, m)).into_owned();
        let q_tilde = Mat::from_fn(m, m, |i, j| q_hat[(i, j)] / (lam[i] * lam[j]).sqrt());
        let te = SortedEigen::new(&q_tilde);
        if te.min() <= 0.0 {
            return Err(Error::Numerical(format!(
                "normalized block is not invertible (min eigenvalue {})",
                te.min()
            )));
        }
        let inv_sqrt = te.map(|v| 1.0 / v.sqrt());
        for i in 0..m {
            for j in 0..m {
                b_full[(i, j)] = lam[i].sqrt() * inv_sqrt[(i, j)] / lam[j].sqrt();
            }
        }
    }
    let a = q * b_full * q.transpose();
    let eye = Mat::identity(k, k);
    let dev = &a - &eye;
    let distortion = (&dev * r * dev.transpose()).trace();
    Ok(ModifierMatrix {
        a,
        source_overlap: r.clone(),
        target,
        epsilon,
        kept: m,
        distortion,
    })
}

/// `ε ‖A(R₁) - A(R₂)‖_∞ / ‖R₁ - R₂‖_∞`.
pub fn modifier_lipschitz_ratio(r1: &Mat, r2: &Mat, d: &GramMatrix, epsilon: f64) -> Result<f64> {
    let dr = sup_norm(&(r1 - r2));
    if dr == 0.0 {
        return Err(Error::arg("R1 = R2: Lipschitz ratio undefined"));
    }
    let a1 = build_modifier(r1, d, epsilon)?;
    let a2 = build_modifier(r2, d, epsilon)?;
    Ok(epsilon * sup_norm(&(a1.a - a2.a)) / dr)
}
