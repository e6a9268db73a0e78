use std::path::Path as FsPath;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde_json::{json, Value};
use vparisi_core::parisi::{self, X_ZERO};
use vparisi_core::prior::{Membership, HULL_TOL};
use vparisi_core::rng::{stream, tag};
use vparisi_core::system::{self, GgSpec, ReplicaOverlaps, Theta};
use vparisi_core::{rpc, Error, GramMatrix, Path, SpinConfig, SpinPrior};

use crate::config::{GgFunctional, Resolved, RunConfig};
use crate::report::Check;
use crate::{Command, Failure};

/// What a command produced, before the report envelope is added.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub components: Value,
    pub checks: Vec<Check>,
}

fn missing(field: &str, command: Command) -> Failure {
    Failure::from(Error::InvalidArgument(format!(
        "[{field}] is required by `{}`",
        command.name()
    )))
}

fn need_path(r: &Resolved, command: Command) -> Result<&Path, Failure> {
    r.path.as_ref().ok_or_else(|| missing("path", command))
}

fn need_d(r: &Resolved, command: Command) -> Result<&GramMatrix, Failure> {
    r.d.as_ref()
        .ok_or_else(|| missing("variational.d", command))
}

fn need_epsilon(config: &RunConfig, command: Command) -> Result<f64, Failure> {
    config
        .variational
        .epsilon
        .ok_or_else(|| missing("variational.epsilon", command))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

pub fn dispatch(command: Command, config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    match command {
        Command::Validate => validate(r),
        Command::Phi => phi(command, r),
        Command::Parisi => parisi_value(command, r),
        Command::Phistar => phistar(command, r),
        Command::Optimize => optimize(config, r),
        Command::RpcCheck => rpc_check(command, config, r),
        Command::Fe => fe(config, r),
        Command::FeConstrained => fe_constrained(command, config, r),
        Command::CovCheck => cov_check(config, r),
        Command::Gg => gg(command, config, r),
    }
}

fn validate(r: &Resolved) -> Result<Outcome, Failure> {
    let mut checks = Vec::new();
    let mut components = json!({
        "kappa": r.model.kappa(),
        "prior_atoms": r.prior.len(),
        "prior_mass": r.prior.mass(),
        "warnings": r.warnings,
    });
    if let Some(d) = &r.d {
        let (inside, residual) = match r.prior.hull().membership(d, HULL_TOL)? {
            Membership::Inside { residual, .. } => (true, residual),
            Membership::Outside { residual, .. } => (false, residual),
        };
        components["d_in_hull"] = json!(inside);
        checks.push(Check {
            name: "hull_membership".into(),
            lhs: residual,
            rhs: 0.0,
            tol: HULL_TOL,
            pass: inside,
        });
    }
    Ok(Outcome {
        components,
        checks,
        ..Outcome::default()
    })
}

fn phi(command: Command, r: &Resolved) -> Result<Outcome, Failure> {
    let path = need_path(r, command)?;
    let v = parisi::eval_phi(&r.model, &r.prior, &r.lambda, path, &r.eval)?;
    Ok(Outcome {
        value: Some(v.value),
        std_error: Some(v.std_error),
        components: json!({ "evaluations": v.evaluations, "lambda": r.lambda.values() }),
        checks: Vec::new(),
    })
}

fn parisi_value(command: Command, r: &Resolved) -> Result<Outcome, Failure> {
    let path = need_path(r, command)?;
    let d = need_d(r, command)?;
    let v = parisi::eval_parisi(&r.model, &r.prior, &r.lambda, d, path, &r.eval)?;
    let tol = 1e-10 * v.theta_term.abs().max(1.0);
    Ok(Outcome {
        value: Some(v.value),
        std_error: Some(v.std_error),
        components: json!({
            "phi": v.phi,
            "lagrange": v.lagrange,
            "theta_term": v.theta_term,
            "theta_term_rearranged": v.theta_term_rearranged,
        }),
        checks: vec![Check::close(
            "theta_term_rearranged",
            v.theta_term,
            v.theta_term_rearranged,
            tol,
        )],
    })
}

fn phistar(command: Command, r: &Resolved) -> Result<Outcome, Failure> {
    let path = need_path(r, command)?;
    let d = need_d(r, command)?;
    let s = parisi::phi_star(&r.model, &r.prior, d, path, &r.eval, &r.optimizer)?;
    Ok(Outcome {
        value: Some(s.value),
        std_error: Some(s.std_error),
        components: json!({
            "lambda": s.lambda.values(),
            "iterations": s.iterations,
            "converged": s.converged,
            "gradient_norm": s.gradient_norm,
        }),
        checks: Vec::new(),
    })
}

fn optimize(config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let levels = config.variational.levels;
    let fixed_d = config.variational.d.is_some() || config.variational.hull_weights.is_some();
    if fixed_d {
        let d = r.d.as_ref().expect("resolved with D");
        let v = parisi::optimize_at(&r.model, &r.prior, d, levels, &r.eval, &r.optimizer)?;
        Ok(Outcome {
            value: Some(v.value),
            std_error: Some(v.std_error),
            components: to_value(&v),
            checks: Vec::new(),
        })
    } else {
        let v = parisi::optimize(&r.model, &r.prior, levels, &r.eval, &r.optimizer)?;
        Ok(Outcome {
            value: Some(v.value),
            std_error: Some(v.std_error),
            components: to_value(&v),
            checks: Vec::new(),
        })
    }
}

fn rpc_check(command: Command, config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let path = need_path(r, command)?;
    let rc = &config.rpc;
    let sim = rpc::simulate_phi(
        &r.model,
        &r.prior,
        &r.lambda,
        path,
        rc.fanout,
        rc.replications,
        config.seed,
    )?;
    let quad = parisi::eval_phi(&r.model, &r.prior, &r.lambda, path, &r.eval)?;
    let y = rpc::simulate_y_functional(
        &r.model,
        path,
        rc.m,
        rc.fanout,
        rc.replications,
        config.seed,
    )?;
    let target = parisi::theta_term(&r.model, path)?;
    let phi_tol = 3.0 * sim.std_error.hypot(quad.std_error);
    Ok(Outcome {
        value: Some(sim.value),
        std_error: Some(sim.std_error),
        components: json!({
            "phi_cascade": sim,
            "phi_recursion": { "value": quad.value, "std_error": quad.std_error },
            "y_functional": y,
            "theta_term": target,
            "x0_positive": path.xs()[0] >= X_ZERO,
        }),
        checks: vec![
            Check::close("phi_cascade_vs_recursion", sim.value, quad.value, phi_tol),
            Check::close("cascade_log_partition", y.value, target, 3.0 * y.std_error),
        ],
    })
}

fn write_csv(path: &FsPath, values: &[f64]) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::new(crate::EXIT_VALIDATION, format!("csv export: {e}"));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["draw", "value"]).map_err(io)?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:.17e}")])
            .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Failure::new(crate::EXIT_VALIDATION, format!("csv export: {e}")))
}

fn fe_outcome(config: &RunConfig, est: system::FreeEnergyEstimate) -> Result<Outcome, Failure> {
    if let Some(path) = &config.system.csv {
        write_csv(path, &est.per_draw)?;
    }
    Ok(Outcome {
        value: Some(est.value),
        std_error: Some(est.std_error),
        components: json!({
            "n_sites": est.n_sites,
            "draws": est.per_draw.len(),
            "configurations": est.configurations,
            "hit_fraction": est.hit_fraction,
            "sample_std": vparisi_core::stats::sample_std(&est.per_draw),
        }),
        checks: Vec::new(),
    })
}

fn fe(config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let s = &config.system;
    let est = system::exact_free_energy(&r.model, &r.prior, s.n_sites, s.draws, config.seed)?;
    fe_outcome(config, est)
}

fn fe_constrained(command: Command, config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let s = &config.system;
    let d = need_d(r, command)?;
    let eps = need_epsilon(config, command)?;
    let est = system::constrained_free_energy(
        &r.model,
        &r.prior,
        s.n_sites,
        d,
        eps,
        s.draws,
        config.seed,
    )?;
    fe_outcome(config, est)
}

/// `n` sites drawn independently from the prior.
pub fn sample_config(prior: &SpinPrior, n: usize, seed: u64, index: u64) -> SpinConfig {
    let atoms = prior.atoms();
    let dist = WeightedIndex::new(atoms.iter().map(|a| a.weight)).expect("positive weights");
    let mut rng = stream(seed, tag::CONFIGS, index);
    let sites: Vec<Vec<f64>> = (0..n)
        .map(|_| atoms[dist.sample(&mut rng)].point.clone())
        .collect();
    SpinConfig::from_sites(&sites).expect("prior atoms share a dimension")
}

fn cov_check(config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let cc = &config.cov_check;
    let (a, b) = match &cc.configs {
        Some([a, b]) => (SpinConfig::from_sites(a)?, SpinConfig::from_sites(b)?),
        None => (
            sample_config(&r.prior, cc.n_sites, config.seed, 0),
            sample_config(&r.prior, cc.n_sites, config.seed, 1),
        ),
    };
    let h = system::hamiltonian_covariance_check(&r.model, &a, &b, cc.draws, config.seed)?;
    let mut checks = vec![Check::close(
        "hamiltonian_covariance",
        h.empirical,
        h.expected,
        3.0 * h.std_error,
    )];
    let mut components = json!({ "hamiltonian": h });
    if let Some(theta) = &cc.theta {
        let t = system::theta_covariance_check(theta, &a, &b, cc.draws, config.seed)?;
        checks.push(Check::close(
            "theta_covariance",
            t.empirical,
            t.expected,
            3.0 * t.std_error,
        ));
        components["theta"] = to_value(&t);
    }
    Ok(Outcome {
        value: Some(h.empirical),
        std_error: Some(h.std_error),
        components,
        checks,
    })
}

fn trace_overlap(o: &ReplicaOverlaps) -> f64 {
    let r = o.get(0, 1);
    r.trace() / r.nrows() as f64
}

fn gg(command: Command, config: &RunConfig, r: &Resolved) -> Result<Outcome, Failure> {
    let d = need_d(r, command)?.clone();
    let epsilon = need_epsilon(config, command)?;
    let g = &config.gg;
    let kappa = r.model.kappa();
    let theta = match &g.theta {
        Some(t) => t.clone(),
        None => Theta::new(2, vec![vec![1.0; kappa]], vec![1])?,
    };
    let perturbation = config.perturbation.clone().unwrap_or_default();
    let spec = GgSpec {
        n_sites: config.system.n_sites,
        d,
        epsilon,
        replicas: g.replicas,
        disorder_draws: g.disorder_draws,
        u_samples: g.u_samples,
        seed: config.seed,
    };
    if g.functional != GgFunctional::Constant && g.replicas < 2 {
        return Err(Failure::from(Error::InvalidArgument(
            "[gg] overlap functionals need replicas >= 2".into(),
        )));
    }
    let f: Box<dyn Fn(&ReplicaOverlaps) -> f64 + Sync> = match g.functional {
        GgFunctional::Constant => Box::new(|_| 1.0),
        GgFunctional::Overlap => Box::new(trace_overlap),
        GgFunctional::OverlapSquared => Box::new(|o| trace_overlap(o).powi(2)),
        GgFunctional::OverlapAbs => Box::new(|o| trace_overlap(o).abs()),
    };
    let est = system::gg_discrepancy(&r.model, &r.prior, &perturbation, &spec, &*f, &theta)?;
    Ok(Outcome {
        value: Some(est.value),
        std_error: Some(est.std_error),
        components: json!({
            "functional": g.functional,
            "terms": est.terms,
            "per_u": est.per_u,
            "per_u_std_error": est.per_u_std_error,
            "configurations": est.configurations,
            "strength": est.strength,
            "perturbation_terms": perturbation.thetas.len(),
        }),
        checks: Vec::new(),
    })
}
