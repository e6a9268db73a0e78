use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use vparisi_core::Backend;

/// One side-by-side comparison. `pass` is `|lhs - rhs| ≤ tol` unless the
/// check is one-sided, in which case it is `lhs ≤ rhs + tol`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    pub fn close(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            lhs,
            rhs,
            tol,
            pass: (lhs - rhs).abs() <= tol,
        }
    }

    pub fn at_most(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            lhs,
            rhs,
            tol,
            pass: lhs <= rhs + tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budgets {
    pub grid_budget: u64,
    pub dim_cap: usize,
    pub enumeration_budget: u64,
    pub term_budget: usize,
    pub leaf_budget: usize,
}

impl Budgets {
    pub fn from_eval(eval: &vparisi_core::EvalSpec) -> Self {
        Budgets {
            grid_budget: eval.grid_budget,
            dim_cap: eval.dim_cap,
            enumeration_budget: vparisi_core::system::ENUMERATION_BUDGET,
            term_budget: vparisi_core::system::TERM_BUDGET,
            leaf_budget: vparisi_core::rpc::LEAF_BUDGET,
        }
    }
}

/// The JSON document every command emits. Field order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub backend: Backend,
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub components: Value,
    pub checks: Vec<Check>,
    pub budgets: Budgets,
    pub runtime_ms: u64,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Lower-case hex SHA-256 of the configuration bytes.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
