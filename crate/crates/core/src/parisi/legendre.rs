use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::GramMatrix;
use crate::mixing::MixedModel;
use crate::prior::SpinPrior;

use super::{eval_phi_with_gradient, upper_entries, EvalSpec, Lambda, OptimizerSpec, Path};

/// `Φ*(D) = inf_λ (Φ(λ) - Σ λ_{kk'} D_{kk'})` at a fixed path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiStar {
    pub value: f64,
    pub std_error: f64,
    pub lambda: Lambda,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the objective's gradient at the returned `λ`.
    pub gradient_norm: f64,
}

pub fn phi_star(
    model: &MixedModel,
    prior: &SpinPrior,
    d: &GramMatrix,
    path: &Path,
    spec: &EvalSpec,
    opt: &OptimizerSpec,
) -> Result<PhiStar> {
    phi_star_from(
        model,
        prior,
        d,
        path,
        spec,
        opt,
        Lambda::zeros(model.kappa()),
    )
}

/// Gradient descent with Armijo backtracking from `start`. The step length
/// carries over between iterations and grows after each accepted step.
pub fn phi_star_from(
    model: &MixedModel,
    prior: &SpinPrior,
    d: &GramMatrix,
    path: &Path,
    spec: &EvalSpec,
    opt: &OptimizerSpec,
    start: Lambda,
) -> Result<PhiStar> {
    opt.validate()?;
    if d.kappa() != model.kappa() || start.kappa() != model.kappa() {
        return Err(Error::shape(model.kappa(), d.kappa()));
    }
    let target = upper_entries(d);
    let objective = |l: &Lambda| -> Result<(f64, f64, Vec<f64>)> {
        let phi = eval_phi_with_gradient(model, prior, l, path, spec)?;
        let grad: Vec<f64> = phi
            .gradient
            .expect("gradient requested")
            .iter()
            .zip(&target)
            .map(|(g, t)| g - t)
            .collect();
        Ok((phi.value - l.pairing(d)?, phi.std_error, grad))
    };
    let sup = |g: &[f64]| g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut lambda = start;
    let (mut f, mut se, mut g) = objective(&lambda)?;
    let mut step = opt.step;
    let mut iterations = 0;
    let mut converged = sup(&g) <= opt.tol;
    while !converged && iterations < opt.max_iter {
        iterations += 1;
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = lambda.clone();
            for (v, gi) in trial.values_mut().iter_mut().zip(&g) {
                *v -= step * gi;
            }
            let (ft, st, gt) = objective(&trial)?;
            if ft <= f - 1e-4 * step * g2 {
                lambda = trial;
                f = ft;
                se = st;
                g = gt;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent left at working precision
            break;
        }
        converged = sup(&g) <= opt.tol;
    }
    Ok(PhiStar {
        value: f,
        std_error: se,
        lambda,
        iterations,
        converged,
        gradient_norm: sup(&g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_ising_is_flat() {
        let m = MixedModel::free(1).unwrap();
        let d = GramMatrix::identity(1);
        let p = Path::single_level(d.clone(), 0.5).unwrap();
        let s = phi_star(
            &m,
            &SpinPrior::ising(),
            &d,
            &p,
            &EvalSpec::default(),
            &OptimizerSpec::default(),
        )
        .unwrap();
        assert!(s.value.abs() < 1e-14);
        assert!(s.converged);
        assert_eq!(s.iterations, 0);
        assert_eq!(s.lambda, Lambda::scalar(0.0));
    }

    #[test]
    fn single_atom_cancels() {
        let m = MixedModel::free(2).unwrap();
        let a = vec![0.6, -0.8];
        let prior = SpinPrior::new(vec![(a.clone(), 1.0)]).unwrap();
        let d = GramMatrix::from_rows(&[vec![0.36, -0.48], vec![-0.48, 0.64]]).unwrap();
        let p = Path::single_level(d.clone(), 0.5).unwrap();
        let start = Lambda::from_values(2, vec![0.3, 1.0, -2.0]).unwrap();
        let s = phi_star_from(
            &m,
            &prior,
            &d,
            &p,
            &EvalSpec::default(),
            &OptimizerSpec::default(),
            start,
        )
        .unwrap();
        assert!(s.value.abs() < 1e-12);
    }

    #[test]
    fn potts_center_is_log_weight_free() {
        // D = diag(1/2, 1/2) for uniform Potts: λ = 0 is optimal, value 0
        let m = MixedModel::free(2).unwrap();
        let prior = SpinPrior::potts(2).unwrap();
        let d = GramMatrix::diagonal(&[0.5, 0.5]).unwrap();
        let p = Path::single_level(d.clone(), 0.5).unwrap();
        let start = Lambda::from_values(2, vec![1.0, 0.0, -0.5]).unwrap();
        let s = phi_star_from(
            &m,
            &prior,
            &d,
            &p,
            &EvalSpec::default(),
            &OptimizerSpec::default(),
            start,
        )
        .unwrap();
        assert!(s.converged);
        assert!(s.value.abs() < 1e-12, "{}", s.value);
    }
}
