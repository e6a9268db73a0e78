//! Variational free energy of mixed even p-spin models with vector spins.
//!
//! The crate evaluates the recursive functional `Φ` and the full Parisi-type
//! functional `P` over discrete Gram-matrix paths, optimizes the sup-inf
//! formula for the limiting free energy, and ships independent oracles for
//! every computable object:
//!
//! * [`rpc`] simulates Ruelle probability cascades with tree-indexed Gaussian
//!   fields and re-derives `Φ` and the cascade log-partition identity;
//! * [`system`] enumerates finite-`N` systems exactly (free energies, the
//!   perturbation Hamiltonian, the Ghirlanda-Guerra discrepancy);
//! * closed-form identities are exposed next to the quantities they check.
//!
//! Shared domain types ([`MixedModel`], [`SpinPrior`], [`GramMatrix`],
//! [`Path`], [`Lambda`], [`CascadeTree`]) are re-exported at the crate root.

pub mod error;
pub mod linalg;
pub mod mixing;
pub mod parisi;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod rpc;
pub mod stats;
pub mod system;

pub use error::{Error, Result};
pub use linalg::{GramMatrix, Mat, PSD_TOL, SYM_TOL};
pub use mixing::{sum_all, MixedModel};
pub use parisi::{
    Backend, EvalSpec, Lambda, OptimizeResult, OptimizerSpec, ParisiValue, Path, PhiStar, PhiValue,
};
pub use prior::{ConstraintHull, Membership, ModifierMatrix, SpinConfig, SpinPrior};
pub use rpc::{CascadeTree, TreeGaussianField};
pub use system::{Disorder, FreeEnergyEstimate, PerturbationSpec, Theta};
