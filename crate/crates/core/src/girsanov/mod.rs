//! Drift mismatch, discrete Girsanov densities, path-space KL functionals and
//! the explicit constants of the Gronwall bound.

mod functional;
mod mismatch;
mod theory;

pub use functional::{
    forward_kl_bound, path_functionals, reversed_kl_functional, scenario_hash, FunctionalEstimate, PathFunctionals,
    PathLaw,
};
pub use mismatch::{drift_mismatch, log_rn_derivative, DriftMismatch};
pub use theory::{
    default_eta, eta_upper, reversed_cap, theory_bound_curve, theory_constants, TheoryConstants, FOUR_SQRT2_E,
    MAX_EXPONENT,
};
