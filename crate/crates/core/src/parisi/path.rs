use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l1_norm, min_eigenvalue, GramMatrix, PSD_TOL};

/// Discrete monotone path `π` in Gram matrices.
///
/// Encoded by `0 ≤ x_0 ≤ … ≤ x_{r-1} ≤ x_r = 1` and
/// `0 = γ_0 ≤ γ_1 ≤ … ≤ γ_r = D` (PSD order), with `π(x) = γ_j` on
/// `(x_{j-1}, x_j]` and `x_{-1} = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathRepr", into = "PathRepr")]
pub struct Path {
    x: Vec<f64>,
    /// `γ_0 .. γ_r`.
    gammas: Vec<GramMatrix>,
}

#[derive(Serialize, Deserialize)]
struct PathRepr {
    x: Vec<f64>,
    /// `γ_1 .. γ_r`, each row-major.
    gammas: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    endpoint: Option<Vec<Vec<f64>>>,
}

impl TryFrom<PathRepr> for Path {
    type Error = Error;
    fn try_from(repr: PathRepr) -> Result<Self> {
        let gammas = repr
            .gammas
            .iter()
            .map(|g| GramMatrix::from_rows(g))
            .collect::<Result<Vec<_>>>()?;
        let path = Path::new(repr.x, gammas)?;
        if let Some(d) = repr.endpoint {
            let d = GramMatrix::from_rows(&d)?;
            path.check_endpoint(&d)?;
        }
        Ok(path)
    }
}

impl From<Path> for PathRepr {
    fn from(p: Path) -> Self {
        PathRepr {
            x: p.x.clone(),
            gammas: p.gammas[1..].iter().map(GramMatrix::to_rows).collect(),
            endpoint: Some(p.endpoint().to_rows()),
        }
    }
}

impl Path {
    /// `x` holds `x_0..x_{r-1}` and `gammas` holds `γ_1..γ_r`; `γ_0 = 0` and
    /// `x_r = 1` are implicit.
    pub fn new(x: Vec<f64>, gammas: Vec<GramMatrix>) -> Result<Self> {
        let r = x.len();
        if r == 0 {
            return Err(Error::InvalidPath("a path needs at least one level".into()));
        }
        if gammas.len() != r {
            return Err(Error::InvalidPath(format!(
                "{} gamma matrices for {r} x values",
                gammas.len()
            )));
        }
        let mut prev = 0.0;
        for (j, &v) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidPath(format!("x_{j} = {v} is outside [0, 1]")));
            }
            if v < prev {
                return Err(Error::InvalidPath(format!(
                    "x is not non-decreasing at index {j} ({v} < {prev})"
                )));
            }
            prev = v;
        }
        let kappa = gammas[0].kappa();
        if gammas.iter().any(|g| g.kappa() != kappa) {
            return Err(Error::InvalidPath("gamma matrices differ in size".into()));
        }
        let mut all = Vec::with_capacity(r + 1);
        all.push(GramMatrix::zeros(kappa));
        all.extend(gammas);
        for j in 1..=r {
            let step = all[j].as_matrix() - all[j - 1].as_matrix();
            let min = min_eigenvalue(&step);
            if min < -PSD_TOL {
                return Err(Error::InvalidPath(format!(
                    "gamma_{j} - gamma_{} is not PSD (min eigenvalue {min:e})",
                    j - 1
                )));
            }
        }
        Ok(Path { x, gammas: all })
    }

    /// One-level path `γ_1 = D` with `x_0`.
    pub fn single_level(d: GramMatrix, x0: f64) -> Result<Self> {
        Self::new(vec![x0], vec![d])
    }

    /// Two-level replica-symmetric path `γ_1 = q D`, `γ_2 = D`, `x_0 = 0`,
    /// `x_1 = 1`.
    pub fn replica_symmetric(d: &GramMatrix, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidPath(format!("q = {q} is outside [0, 1]")));
        }
        let mid = GramMatrix::new(d.as_matrix() * q)?;
        Self::new(vec![0.0, 1.0], vec![mid, d.clone()])
    }

    pub fn r(&self) -> usize {
        self.x.len()
    }

    pub fn kappa(&self) -> usize {
        self.gammas[0].kappa()
    }

    /// `x_0 .. x_{r-1}`.
    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    /// `x_j` for `-1 ≤ j ≤ r` given as `j + 1`-shifted access; use
    /// [`Path::x_at`] for the natural index.
    pub fn x_at(&self, j: isize) -> f64 {
        if j < 0 {
            0.0
        } else if j as usize >= self.r() {
            1.0
        } else {
            self.x[j as usize]
        }
    }

    /// `γ_j` for `0 ≤ j ≤ r`.
    pub fn gamma(&self, j: usize) -> &GramMatrix {
        &self.gammas[j]
    }

    pub fn gammas(&self) -> &[GramMatrix] {
        &self.gammas
    }

    pub fn endpoint(&self) -> &GramMatrix {
        &self.gammas[self.r()]
    }

    pub fn check_endpoint(&self, d: &GramMatrix) -> Result<()> {
        if d.kappa() != self.kappa() {
            return Err(Error::shape(self.kappa(), d.kappa()));
        }
        let gap = crate::linalg::sup_norm(&(d.as_matrix() - self.endpoint().as_matrix()));
        if gap > 1e-12 {
            return Err(Error::InvalidPath(format!(
                "path endpoint differs from D by {gap:e}"
            )));
        }
        Ok(())
    }

    /// `π(t)` for `t ∈ [0, 1]`; `π(0) = 0`.
    pub fn value_at(&self, t: f64) -> &GramMatrix {
        if t <= 0.0 {
            return &self.gammas[0];
        }
        for j in 0..self.r() {
            if t <= self.x[j] {
                return &self.gammas[j];
            }
        }
        self.endpoint()
    }

    /// Breakpoints `0 = b_0 ≤ … ≤ 1` of the step function.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.r() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.x);
        b.push(1.0);
        b
    }

    /// `∫_0^1 f(π(t)) dt`, exact for a step function.
    pub fn integrate(&self, f: impl Fn(&GramMatrix) -> f64) -> f64 {
        let b = self.breakpoints();
        b.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[1] - w[0]) * f(self.value_at(0.5 * (w[0] + w[1]))))
            .sum()
    }

    /// Inserts a level `(x, γ)` between positions `j-1` and `j`. The new
    /// `γ` must fit monotonically; duplicating a neighbour gives a
    /// refinement that leaves the path unchanged as a function.
    pub fn with_level_inserted(&self, j: usize, x: f64, gamma: GramMatrix) -> Result<Path> {
        if j > self.r() {
            return Err(Error::InvalidPath(format!("insert position {j} > r")));
        }
        let mut xs = self.x.clone();
        xs.insert(j, x);
        let mut gs: Vec<GramMatrix> = self.gammas[1..].to_vec();
        gs.insert(j, gamma);
        Path::new(xs, gs)
    }

    /// Appends `x_{r+1} = 1`, `γ_{r+1} = d`. Requires `γ_r ≤ d`.
    pub fn extended_to(&self, d: &GramMatrix) -> Result<Path> {
        let mut xs = self.x.clone();
        xs.push(1.0);
        let mut gs: Vec<GramMatrix> = self.gammas[1..].to_vec();
        gs.push(d.clone());
        Path::new(xs, gs)
    }
}

/// `Δ(π₁, π₂) = ∫_0^1 ‖π₁(t) - π₂(t)‖_1 dt` over the merged breakpoints.
pub fn path_distance(a: &Path, b: &Path) -> Result<f64> {
    if a.kappa() != b.kappa() {
        return Err(Error::shape(a.kappa(), b.kappa()));
    }
    let mut points: Vec<f64> = a.breakpoints();
    points.extend(b.breakpoints());
    points.sort_by(f64::total_cmp);
    points.dedup();
    Ok(points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (w[1] - w[0]) * l1_norm(&(a.value_at(mid).as_matrix() - b.value_at(mid).as_matrix()))
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> GramMatrix {
        GramMatrix::from_rows(&[vec![v]]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Path::new(vec![], vec![]).is_err());
        assert!(Path::new(vec![0.5, 0.2], vec![scalar(0.5), scalar(1.0)]).is_err());
        assert!(Path::new(vec![0.2, 1.2], vec![scalar(0.5), scalar(1.0)]).is_err());
        assert!(Path::new(vec![0.2, 0.5], vec![scalar(0.7), scalar(0.5)]).is_err());
        assert!(Path::new(vec![0.2], vec![scalar(0.5), scalar(1.0)]).is_err());
        let p = Path::new(vec![0.0, 1.0], vec![scalar(0.3), scalar(1.0)]).unwrap();
        assert_eq!(p.r(), 2);
        assert_eq!(p.x_at(-1), 0.0);
        assert_eq!(p.x_at(2), 1.0);
        assert!(p.check_endpoint(&scalar(1.0)).is_ok());
        assert!(p.check_endpoint(&scalar(0.9)).is_err());
    }

    #[test]
    fn step_function_values() {
        let p = Path::new(vec![0.25, 0.5], vec![scalar(0.3), scalar(1.0)]).unwrap();
        assert_eq!(p.value_at(0.0)[(0, 0)], 0.0);
        assert_eq!(p.value_at(0.25)[(0, 0)], 0.0);
        assert_eq!(p.value_at(0.3)[(0, 0)], 0.3);
        assert_eq!(p.value_at(0.5)[(0, 0)], 0.3);
        assert_eq!(p.value_at(0.75)[(0, 0)], 1.0);
        let mean = p.integrate(|g| g[(0, 0)]);
        assert!((mean - (0.25 * 0.3 + 0.5 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let g = GramMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap();
        let h = GramMatrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.25]]).unwrap();
        let constant_g = Path::single_level(g.clone(), 0.0).unwrap();
        let constant_h = Path::single_level(h.clone(), 0.0).unwrap();
        assert_eq!(path_distance(&constant_g, &constant_g).unwrap(), 0.0);
        let norm = l1_norm(&(g.as_matrix() - h.as_matrix()));
        assert!((path_distance(&constant_g, &constant_h).unwrap() - norm).abs() < 1e-15);
        // h on (0, 1/2], g on (1/2, 1] against constant g
        let half = Path::new(vec![0.0, 0.5], vec![h.clone(), g.clone()]).unwrap();
        assert!((path_distance(&half, &constant_g).unwrap() - 0.5 * norm).abs() < 1e-15);
    }

    #[test]
    fn refinement_and_extension() {
        let p = Path::new(vec![0.3], vec![scalar(1.0)]).unwrap();
        let refined = p.with_level_inserted(0, 0.1, scalar(0.0)).unwrap();
        assert_eq!(path_distance(&p, &refined).unwrap(), 0.0);
        let ext = p.extended_to(&scalar(1.5)).unwrap();
        assert_eq!(ext.r(), 2);
        assert_eq!(ext.endpoint()[(0, 0)], 1.5);
        assert!(p.extended_to(&scalar(0.5)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = Path::new(vec![0.2, 0.7], vec![scalar(0.4), scalar(1.0)]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: Path = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<Path>(
            r#"{"x":[0.2],"gammas":[[[1.0]]],"endpoint":[[0.5]]}"#
        )
        .is_err());
    }
}
