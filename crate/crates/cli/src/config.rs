//! TOML run configuration.
//!
//! Syntax and unknown keys are rejected while parsing (with the line and
//! column from the TOML parser); model-level invariants are checked
//! afterwards and reported with the section they came from.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vparisi_core::system::{PerturbationSpec, Theta};
use vparisi_core::{
    Error, EvalSpec, GramMatrix, Lambda, MixedModel, OptimizerSpec, Path, SpinConfig, SpinPrior,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub path: Option<PathConfig>,
    #[serde(default)]
    pub variational: VariationalConfig,
    #[serde(default)]
    pub rpc: RpcConfig,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub cov_check: CovCheckConfig,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub gg: GgConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kappa: usize,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
    #[serde(default)]
    pub external_field: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub p: u32,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Ising,
    IsingCounting,
    Hypercube,
    Potts,
    Atoms,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Dimension for `hypercube` and `potts`.
    #[serde(default)]
    pub kappa: Option<usize>,
    #[serde(default)]
    pub atoms: Vec<Vec<f64>>,
    /// Probability weights; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationalConfig {
    /// Upper triangle of `λ`, row by row.
    pub lambda: Option<Vec<f64>>,
    pub d: Option<Vec<Vec<f64>>>,
    /// Convex weights on the prior's atoms defining `D`.
    pub hull_weights: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    /// Number of levels `r` for `optimize`.
    pub levels: usize,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        VariationalConfig {
            lambda: None,
            d: None,
            hull_weights: None,
            epsilon: None,
            levels: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpcConfig {
    pub fanout: usize,
    pub replications: usize,
    /// `M` in the cascade log-partition identity.
    pub m: f64,
}

impl Default for RpcConfig {
    fn default() -> Self {
        RpcConfig {
            fanout: 128,
            replications: 200,
            m: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub n_sites: usize,
    pub draws: usize,
    /// Per-draw values are written here as CSV when set.
    pub csv: Option<PathBuf>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_sites: 4,
            draws: 100,
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovCheckConfig {
    pub n_sites: usize,
    pub draws: usize,
    /// Two configurations as lists of site vectors; sampled from the prior
    /// when absent.
    pub configs: Option<[Vec<Vec<f64>>; 2]>,
    pub theta: Option<Theta>,
}

impl Default for CovCheckConfig {
    fn default() -> Self {
        CovCheckConfig {
            n_sites: 3,
            draws: 100_000,
            configs: None,
            theta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GgFunctional {
    Constant,
    /// `tr R̃_{12} / κ`
    Overlap,
    /// `(tr R̃_{12} / κ)²`
    OverlapSquared,
    /// `|tr R̃_{12} / κ|`
    OverlapAbs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GgConfig {
    pub replicas: usize,
    pub disorder_draws: usize,
    pub u_samples: usize,
    pub functional: GgFunctional,
    pub theta: Option<Theta>,
}

impl Default for GgConfig {
    fn default() -> Self {
        GgConfig {
            replicas: 2,
            disorder_draws: 200,
            u_samples: 4,
            functional: GgFunctional::OverlapSquared,
            theta: None,
        }
    }
}

/// Where a validation failure came from.
#[derive(Debug)]
pub struct FieldError {
    pub field: String,
    pub error: Error,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.field, self.error)
    }
}

fn at<T>(field: &str, r: vparisi_core::Result<T>) -> Result<T, FieldError> {
    r.map_err(|error| FieldError {
        field: field.to_string(),
        error,
    })
}

fn invalid(field: &str, msg: impl Into<String>) -> FieldError {
    FieldError {
        field: field.to_string(),
        error: Error::InvalidArgument(msg.into()),
    }
}

/// Core objects built from a [`RunConfig`].
/// Path levels as written: `x_0..x_{r-1}` and `γ_1..γ_r`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub x: Vec<f64>,
    pub gammas: Vec<Vec<Vec<f64>>>,
}

impl PathConfig {
    pub fn build(&self) -> Result<Path, Error> {
        let gammas = self
            .gammas
            .iter()
            .map(|g| GramMatrix::from_rows(g))
            .collect::<Result<Vec<_>, _>>()?;
        Path::new(self.x.clone(), gammas)
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: MixedModel,
    pub prior: SpinPrior,
    pub eval: EvalSpec,
    pub optimizer: OptimizerSpec,
    pub lambda: Lambda,
    pub d: Option<GramMatrix>,
    pub path: Option<Path>,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Builds and validates every object the configuration defines.
    pub fn resolve(&self) -> Result<Resolved, FieldError> {
        let terms = self.model.terms.iter().map(|t| (t.p, t.beta.clone()));
        let mut model = at("model", MixedModel::new(self.model.kappa, terms))?;
        if let Some(h) = &self.model.external_field {
            model = at("model.external_field", model.with_external_field(h.clone()))?;
        }
        let prior = at("prior", self.prior.build())?;
        if prior.kappa() != model.kappa() {
            return Err(FieldError {
                field: "prior".into(),
                error: Error::InvalidPrior(format!(
                    "atoms have dimension {}, model has kappa = {}",
                    prior.kappa(),
                    model.kappa()
                )),
            });
        }
        let mut eval = self.eval.clone();
        eval.seed = self.seed;
        at("eval", eval.validate())?;
        let mut optimizer = self.optimizer.clone();
        optimizer.seed = self.seed;
        at("optimizer", optimizer.validate())?;

        let kappa = model.kappa();
        let lambda = match &self.variational.lambda {
            Some(v) => at("variational.lambda", Lambda::from_values(kappa, v.clone()))?,
            None => Lambda::zeros(kappa),
        };
        let path = match &self.path {
            Some(p) => Some(at("path", p.build())?),
            None => None,
        };
        let d = match (&self.variational.d, &self.variational.hull_weights) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "variational",
                    "give either d or hull_weights, not both",
                ))
            }
            (Some(rows), None) => Some(at("variational.d", GramMatrix::from_rows(rows))?),
            (None, Some(w)) => Some(at("variational.hull_weights", prior.hull().point(w))?),
            (None, None) => path.as_ref().map(|p| p.endpoint().clone()),
        };
        if let Some(d) = &d {
            if d.kappa() != kappa {
                return Err(invalid(
                    "variational.d",
                    format!("D is {0}x{0}, model has kappa = {kappa}", d.kappa()),
                ));
            }
        }
        if let Some(path) = &path {
            if path.kappa() != kappa {
                return Err(invalid(
                    "path",
                    format!(
                        "path matrices are {0}x{0}, model has kappa = {kappa}",
                        path.kappa()
                    ),
                ));
            }
            if let Some(d) = &d {
                at("path", path.check_endpoint(d))?;
            }
        }
        if let Some(eps) = self.variational.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(invalid("variational.epsilon", "epsilon must be positive"));
            }
        }
        if self.variational.levels == 0 {
            return Err(invalid("variational.levels", "levels must be >= 1"));
        }
        if self.rpc.fanout < 2 || self.rpc.replications < 2 {
            return Err(invalid("rpc", "fanout and replications must be >= 2"));
        }
        if !(self.rpc.m.is_finite() && self.rpc.m > 0.0) {
            return Err(invalid("rpc.m", "M must be positive"));
        }
        if self.system.n_sites == 0 || self.system.draws == 0 {
            return Err(invalid("system", "n_sites and draws must be >= 1"));
        }
        if self.cov_check.n_sites == 0 || self.cov_check.draws < 2 {
            return Err(invalid(
                "cov_check",
                "n_sites >= 1 and draws >= 2 are required",
            ));
        }
        if let Some(t) = &self.cov_check.theta {
            if t.kappa() != kappa {
                return Err(invalid(
                    "cov_check.theta",
                    "direction length must equal kappa",
                ));
            }
        }
        if let Some(configs) = &self.cov_check.configs {
            for (i, c) in configs.iter().enumerate() {
                let c = at(
                    &format!("cov_check.configs[{i}]"),
                    SpinConfig::from_sites(c),
                )?;
                if c.kappa() != kappa {
                    return Err(invalid(
                        "cov_check.configs",
                        "site vectors must have length kappa",
                    ));
                }
            }
        }
        if let Some(p) = &self.perturbation {
            at("perturbation", p.validate())?;
            if p.thetas.iter().any(|t| t.kappa() != kappa) {
                return Err(invalid(
                    "perturbation.thetas",
                    "direction length must equal kappa",
                ));
            }
        }
        if self.gg.replicas == 0 || self.gg.disorder_draws < 2 || self.gg.u_samples == 0 {
            return Err(invalid(
                "gg",
                "replicas >= 1, disorder_draws >= 2 and u_samples >= 1 are required",
            ));
        }
        if let Some(t) = &self.gg.theta {
            if t.kappa() != kappa {
                return Err(invalid("gg.theta", "direction length must equal kappa"));
            }
        }
        let warnings = model.coefficient_warnings(prior.support_bound());
        Ok(Resolved {
            model,
            prior,
            eval,
            optimizer,
            lambda,
            d,
            path,
            warnings,
        })
    }
}

impl PriorConfig {
    pub fn build(&self) -> vparisi_core::Result<SpinPrior> {
        let need_kappa = || {
            self.kappa
                .ok_or_else(|| Error::InvalidPrior("this prior kind needs kappa".into()))
        };
        let prior = match self.kind {
            PriorKind::Ising => SpinPrior::ising(),
            PriorKind::IsingCounting => SpinPrior::ising_counting(),
            PriorKind::Hypercube => SpinPrior::hypercube(need_kappa()?)?,
            PriorKind::Potts => SpinPrior::potts(need_kappa()?)?,
            PriorKind::Atoms => {
                let n = self.atoms.len();
                let weights = match &self.weights {
                    Some(w) if w.len() != n => {
                        return Err(Error::InvalidPrior(format!(
                            "{} weights for {n} atoms",
                            w.len()
                        )))
                    }
                    Some(w) => w.clone(),
                    None => vec![1.0 / n.max(1) as f64; n],
                };
                let atoms = self.atoms.iter().cloned().zip(weights).collect();
                return SpinPrior::with_mass(atoms, self.mass.unwrap_or(1.0));
            }
        };
        match self.mass {
            Some(m) => {
                let atoms = prior
                    .atoms()
                    .iter()
                    .map(|a| (a.point.clone(), a.weight))
                    .collect();
                SpinPrior::with_mass(atoms, m)
            }
            None => Ok(prior),
        }
    }
}
