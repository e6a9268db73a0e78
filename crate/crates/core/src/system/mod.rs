//! Finite-`N` systems by exact enumeration: Hamiltonians, free energies,
//! the perturbation Hamiltonian and the Ghirlanda–Guerra discrepancy.

mod free_energy;
mod gg;
mod hamiltonian;
mod perturbation;

pub use free_energy::{
    configuration_count, constrained_free_energy, exact_free_energy, in_constraint_set,
    FreeEnergyEstimate, ENUMERATION_BUDGET,
};
pub use gg::{gg_discrepancy, GgEstimate, GgSpec, GgTerms, OverlapFunctional, ReplicaOverlaps};
pub use hamiltonian::{
    field_energy, hamiltonian, hamiltonian_covariance_check, CovarianceCheck, Disorder, TERM_BUDGET,
};
pub use perturbation::{
    perturbation_h_theta, theta_covariance_check, PerturbationSpec, Theta, VarianceCheck,
};
