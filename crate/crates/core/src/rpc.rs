//! Truncated Ruelle probability cascades and tree-indexed Gaussian fields.
//!
//! A depth-`r` tree has `fanout` children per internal node. The children of
//! a depth-`j` node are the `fanout` largest points of a Poisson process with
//! intensity `x_j t^{-x_j-1} dt`, obtained as `Γ_i^{-1/x_j}` from cumulative
//! Exp(1) arrivals `Γ_i`. A leaf weight is the product of the points along its
//! root path, normalized over the truncated tree. Leaves are stored in
//! lexicographic order of `α ∈ {0..fanout}^r`.

use rand::Rng as _;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{psd_factor, Mat};
use crate::mixing::{sum_all, MixedModel};
use crate::parisi::{increments, Lambda, Path, X_ZERO};
use crate::prior::SpinPrior;
use crate::rng::{stream, tag, Rng};
use crate::stats::{log_sum_exp, MeanSe};

/// Largest number of leaves a tree may have.
pub const LEAF_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeTree {
    r: usize,
    x: Vec<f64>,
    fanout: usize,
    /// Normalized `log v_α`, one per leaf.
    log_weights: Vec<f64>,
}

/// How a level with parameter `x` spreads weight over its children.
#[derive(Clone, Copy)]
enum LevelKind {
    Poisson(f64),
    /// `x = 0`: all weight on the largest point.
    Degenerate,
    /// `x = 1`: uniform weights, the large-fanout limit.
    Uniform,
}

impl LevelKind {
    fn of(x: f64) -> Self {
        if x < X_ZERO {
            LevelKind::Degenerate
        } else if x >= 1.0 - 1e-12 {
            LevelKind::Uniform
        } else {
            LevelKind::Poisson(x)
        }
    }

    fn log_points(self, fanout: usize, rng: &mut Rng) -> Vec<f64> {
        match self {
            LevelKind::Poisson(x) => {
                let mut gamma = 0.0;
                (0..fanout)
                    .map(|_| {
                        gamma += rng.sample::<f64, _>(Exp1);
                        -gamma.ln() / x
                    })
                    .collect()
            }
            LevelKind::Degenerate => (0..fanout)
                .map(|i| if i == 0 { 0.0 } else { f64::NEG_INFINITY })
                .collect(),
            LevelKind::Uniform => vec![0.0; fanout],
        }
    }
}

fn check_tree_shape(r: usize, fanout: usize) -> Result<usize> {
    if r == 0 {
        return Err(Error::arg("cascade depth must be at least 1"));
    }
    if fanout < 2 {
        return Err(Error::arg("fanout must be at least 2"));
    }
    fanout
        .checked_pow(r as u32)
        .filter(|&n| n <= LEAF_BUDGET)
        .ok_or_else(|| {
            Error::Budget(format!(
                "fanout {fanout} at depth {r} exceeds {LEAF_BUDGET} leaves"
            ))
        })
}

/// Cascade with every `x_j` strictly inside `(0, 1)`.
pub fn sample_cascade(x: &[f64], fanout: usize, seed: u64) -> Result<CascadeTree> {
    if let Some((j, v)) = x.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
        return Err(Error::arg(format!("x_{j} = {v} must lie in (0, 1)")));
    }
    sample_cascade_extended(x, fanout, seed)
}

/// Cascade allowing `x_j ∈ [0, 1]`: `x_j ≈ 0` puts the whole weight on one
/// child and `x_j = 1` weights the children uniformly.
pub fn sample_cascade_extended(x: &[f64], fanout: usize, seed: u64) -> Result<CascadeTree> {
    let r = x.len();
    let leaves = check_tree_shape(r, fanout)?;
    if let Some((j, v)) = x
        .iter()
        .enumerate()
        .find(|(_, &v)| !(0.0..=1.0).contains(&v))
    {
        return Err(Error::arg(format!("x_{j} = {v} must lie in [0, 1]")));
    }
    let mut rng = stream(seed, tag::CASCADE, 0);
    // log-weights of the nodes at the current depth, breadth-first
    let mut level = vec![0.0];
    for &xj in x {
        let kind = LevelKind::of(xj);
        let mut next = Vec::with_capacity(level.len() * fanout);
        for &parent in &level {
            for p in kind.log_points(fanout, &mut rng) {
                next.push(parent + p);
            }
        }
        level = next;
    }
    debug_assert_eq!(level.len(), leaves);
    let norm = log_sum_exp(level.iter().copied());
    for v in &mut level {
        *v -= norm;
    }
    Ok(CascadeTree {
        r,
        x: x.to_vec(),
        fanout,
        log_weights: level,
    })
}

/// `α¹ ∧ α²`: the number of common leading coordinates.
pub fn ancestor_depth(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).take_while(|(u, v)| u == v).count()
}

impl CascadeTree {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn leaves(&self) -> usize {
        self.log_weights.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|v| v.exp()).collect()
    }

    /// Leaf index to its path `α`.
    pub fn alpha(&self, leaf: usize) -> Vec<usize> {
        let mut out = vec![0; self.r];
        let mut rest = leaf;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.fanout;
            rest /= self.fanout;
        }
        out
    }

    /// Index of the depth-`j` ancestor of a leaf among the depth-`j` nodes.
    pub fn ancestor(&self, leaf: usize, depth: usize) -> usize {
        leaf / self.fanout.pow((self.r - depth) as u32)
    }

    /// `log Σ_α v_α exp(f(α))`.
    pub fn log_partition(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        let terms: Vec<f64> = (0..self.leaves())
            .map(|l| self.log_weights[l] + f(l))
            .collect();
        log_sum_exp(terms.iter().copied())
    }
}

/// Leaf values of `Z(α) ∈ R^κ` and `Y(α) ∈ R`, built from independent
/// per-node increments: a depth-`j` node carries `N(0, ξ'(γ_j) - ξ'(γ_{j-1}))`
/// for `Z` and `N(0, Sum θ(γ_j) - Sum θ(γ_{j-1}))` for `Y`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeGaussianField {
    pub kappa: usize,
    /// Row-major, one κ-vector per leaf.
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl TreeGaussianField {
    pub fn z_at(&self, leaf: usize) -> &[f64] {
        &self.z[leaf * self.kappa..(leaf + 1) * self.kappa]
    }
}

struct FieldPlan {
    kappa: usize,
    z_factors: Vec<Mat>,
    y_sd: Vec<f64>,
}

impl FieldPlan {
    fn new(model: &MixedModel, path: &Path) -> Result<Self> {
        let incs = increments(model, path)?;
        let z_factors = incs
            .iter()
            .map(|m| psd_factor(m, 1e-14))
            .collect::<Result<Vec<_>>>()?;
        let sums: Vec<f64> = path
            .gammas()
            .iter()
            .map(|g| Ok(sum_all(&model.theta_hadamard(g)?)))
            .collect::<Result<_>>()?;
        let y_sd = sums
            .windows(2)
            .map(|w| (w[1] - w[0]).max(0.0).sqrt())
            .collect();
        Ok(FieldPlan {
            kappa: model.kappa(),
            z_factors,
            y_sd,
        })
    }

    fn sample(&self, tree: &CascadeTree, rng: &mut Rng) -> TreeGaussianField {
        let kappa = self.kappa;
        let mut z = vec![0.0];
        z.resize(kappa, 0.0);
        let mut y = vec![0.0];
        for j in 0..tree.r {
            let f = &self.z_factors[j];
            let mut nz = Vec::with_capacity(z.len() * tree.fanout);
            let mut ny = Vec::with_capacity(y.len() * tree.fanout);
            for (node, &yp) in y.iter().enumerate() {
                let parent = &z[node * kappa..(node + 1) * kappa];
                for _ in 0..tree.fanout {
                    let xi: Vec<f64> = (0..f.ncols()).map(|_| rng.sample(StandardNormal)).collect();
                    for k in 0..kappa {
                        let inc: f64 = (0..f.ncols()).map(|d| f[(k, d)] * xi[d]).sum();
                        nz.push(parent[k] + inc);
                    }
                    let g: f64 = rng.sample(StandardNormal);
                    ny.push(yp + self.y_sd[j] * g);
                }
            }
            z = nz;
            y = ny;
        }
        TreeGaussianField { kappa, z, y }
    }
}

pub fn sample_fields(
    tree: &CascadeTree,
    model: &MixedModel,
    path: &Path,
    seed: u64,
) -> Result<TreeGaussianField> {
    if path.r() != tree.r {
        return Err(Error::shape(format!("path with r = {}", tree.r), path.r()));
    }
    let plan = FieldPlan::new(model, path)?;
    Ok(plan.sample(tree, &mut stream(seed, tag::FIELDS, 0)))
}

/// Monte-Carlo estimate with the per-replication values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub replications: usize,
}

impl From<MeanSe> for Estimate {
    fn from(m: MeanSe) -> Self {
        Estimate {
            value: m.mean,
            std_error: m.std_error,
            replications: m.n,
        }
    }
}

fn replicate(
    path: &Path,
    model: &MixedModel,
    fanout: usize,
    replications: usize,
    seed: u64,
    f: impl Fn(&CascadeTree, &TreeGaussianField) -> f64 + Sync,
) -> Result<Vec<f64>> {
    if replications == 0 {
        return Err(Error::arg("replications must be positive"));
    }
    check_tree_shape(path.r(), fanout)?;
    let plan = FieldPlan::new(model, path)?;
    (0..replications)
        .into_par_iter()
        .map(|i| {
            let rep_seed = crate::rng::derive_seed(seed, tag::REPLICATION, i as u64);
            let tree = sample_cascade_extended(path.xs(), fanout, rep_seed)?;
            let fields = plan.sample(&tree, &mut stream(rep_seed, tag::FIELDS, 0));
            Ok(f(&tree, &fields))
        })
        .collect()
}

/// `(1/M) E log Σ_α v_α exp(√M Y(α))`, whose untruncated value is
/// `½ Σ_j x_j Sum(θ(γ_{j+1}) - θ(γ_j))`.
pub fn simulate_y_functional(
    model: &MixedModel,
    path: &Path,
    m: f64,
    fanout: usize,
    replications: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::arg(format!("M = {m} must be positive")));
    }
    let scale = m.sqrt();
    let values = replicate(path, model, fanout, replications, seed, |tree, fields| {
        tree.log_partition(|l| scale * fields.y[l]) / m
    })?;
    Ok(MeanSe::of(&values).into())
}

/// `E log Σ_α v_α ∫ exp(⟨σ, Z(α)⟩ + Σ λ_{kk'} σ(k)σ(k')) dμ(σ)`: the cascade
/// representation of `Φ`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_phi(
    model: &MixedModel,
    prior: &SpinPrior,
    lambda: &Lambda,
    path: &Path,
    fanout: usize,
    replications: usize,
    seed: u64,
) -> Result<Estimate> {
    if prior.kappa() != model.kappa() || lambda.kappa() != model.kappa() {
        return Err(Error::shape(model.kappa(), prior.kappa()));
    }
    let inner = crate::parisi::phi::Inner::new(prior, lambda, None)?;
    let h = model.external_field().to_vec();
    let values = replicate(path, model, fanout, replications, seed, |tree, fields| {
        let mut t = vec![0.0; h.len()];
        tree.log_partition(|l| {
            for ((ti, hi), zi) in t.iter_mut().zip(&h).zip(fields.z_at(l)) {
                *ti = hi + zi;
            }
            inner.value(&t)
        })
    })?;
    Ok(MeanSe::of(&values).into())
}

/// Positive functional of a leaf's `(Z(α), Y(α))`.
pub type LeafFunctional<'a> = &'a (dyn Fn(&[f64], f64) -> f64 + Sync);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitCheck {
    /// `E log Σ_α v_α Σ_j A_j(α)`.
    pub lhs: Estimate,
    /// `(log n)/x_0 + max_j E log Σ_α v_α A_j(α)`.
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub parts: Vec<Estimate>,
}

/// Both sides of `E log Σ v_α Σ_{j≤n} A_j ≤ (log n)/x_0 + max_j E log Σ v_α A_j`
/// on a common set of replications.
pub fn log_sum_split_check(
    model: &MixedModel,
    path: &Path,
    parts: &[LeafFunctional<'_>],
    fanout: usize,
    replications: usize,
    seed: u64,
) -> Result<SplitCheck> {
    if parts.is_empty() {
        return Err(Error::arg("at least one part is needed"));
    }
    let x0 = path.xs()[0];
    if x0 < X_ZERO {
        return Err(Error::arg("the split bound needs x_0 > 0"));
    }
    let n = parts.len();
    let plan = FieldPlan::new(model, path)?;
    let per_rep: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let rep_seed = crate::rng::derive_seed(seed, tag::REPLICATION, i as u64);
            let tree = sample_cascade_extended(path.xs(), fanout, rep_seed)?;
            let fields = plan.sample(&tree, &mut stream(rep_seed, tag::FIELDS, 0));
            let mut row = Vec::with_capacity(n + 1);
            let total = tree.log_partition(|l| {
                let s: f64 = parts.iter().map(|a| a(fields.z_at(l), fields.y[l])).sum();
                s.ln()
            });
            row.push(total);
            for a in parts {
                row.push(tree.log_partition(|l| a(fields.z_at(l), fields.y[l]).ln()));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let column = |c: usize| -> Vec<f64> { per_rep.iter().map(|r| r[c]).collect() };
    let lhs: Estimate = MeanSe::of(&column(0)).into();
    let parts: Vec<Estimate> = (1..=n).map(|c| MeanSe::of(&column(c)).into()).collect();
    let best = parts
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("non-empty");
    Ok(SplitCheck {
        rhs: (n as f64).ln() / x0 + best.value,
        rhs_std_error: best.std_error,
        lhs,
        parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::GramMatrix;

    #[test]
    fn weights_are_normalized_and_reproducible() {
        let t = sample_cascade(&[0.3, 0.7], 8, 5).unwrap();
        assert_eq!(t.leaves(), 64);
        let total: f64 = t.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(t, sample_cascade(&[0.3, 0.7], 8, 5).unwrap());
        assert_ne!(t, sample_cascade(&[0.3, 0.7], 8, 6).unwrap());
        let two = sample_cascade(&[0.5], 2, 1).unwrap();
        assert!((two.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strict_and_extended_parameters() {
        assert!(sample_cascade(&[1.0], 4, 0).is_err());
        assert!(sample_cascade(&[0.0], 4, 0).is_err());
        assert!(sample_cascade(&[0.5], 1, 0).is_err());
        let u = sample_cascade_extended(&[1.0], 4, 0).unwrap();
        assert!(u.weights().iter().all(|w| (w - 0.25).abs() < 1e-15));
        let d = sample_cascade_extended(&[0.0], 4, 0).unwrap();
        assert_eq!(d.weights(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ancestors() {
        assert_eq!(ancestor_depth(&[1, 2, 3], &[1, 2, 3]), 3);
        assert_eq!(ancestor_depth(&[0, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(ancestor_depth(&[1, 1, 2], &[1, 1, 3]), 2);
        let t = sample_cascade(&[0.2, 0.5, 0.8], 3, 0).unwrap();
        assert_eq!(t.alpha(0), vec![0, 0, 0]);
        assert_eq!(t.alpha(26), vec![2, 2, 2]);
        assert_eq!(t.alpha(5), vec![0, 1, 2]);
        assert_eq!(t.ancestor(5, 2), 1);
        assert_eq!(t.ancestor(5, 0), 0);
    }

    #[test]
    fn free_model_phi_has_no_variance() {
        let m = MixedModel::free(1).unwrap();
        let p = Path::single_level(GramMatrix::identity(1), 0.5).unwrap();
        let e = simulate_phi(&m, &SpinPrior::ising(), &Lambda::scalar(0.3), &p, 16, 5, 1).unwrap();
        assert!((e.value - 0.3).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
        let y = simulate_y_functional(&m, &p, 20.0, 16, 5, 1).unwrap();
        assert!(y.value.abs() < 1e-12);
    }

    #[test]
    fn single_part_split_is_equality() {
        let m = MixedModel::sk(1, 0.5).unwrap();
        let p = Path::single_level(GramMatrix::identity(1), 0.5).unwrap();
        let a = |z: &[f64], _y: f64| z[0].exp();
        let c = log_sum_split_check(&m, &p, &[&a], 16, 10, 3).unwrap();
        assert!((c.lhs.value - c.rhs).abs() < 1e-12);
    }
}
