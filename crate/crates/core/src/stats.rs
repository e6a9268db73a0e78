//! Summary statistics and numerically stable reductions.

/// `log Σ exp(v_i)`, shifted by the maximum. Returns `-inf` for an empty or
/// all `-inf` input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log Σ w_i exp(v_i)` for non-negative weights.
pub fn log_weighted_sum_exp(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let max = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .fold(f64::NEG_INFINITY, |m, (&v, _)| m.max(v));
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * (v - max).exp())
        .sum();
    max + sum.ln()
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, std_error, n }
    }

    /// `|self - other| <= k` combined standard errors.
    pub fn agrees_with(&self, other: f64, other_se: f64, k: f64) -> bool {
        (self.mean - other).abs() <= k * self.std_error.hypot(other_se)
    }
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}
