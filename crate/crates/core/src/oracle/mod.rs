//! Closed-form Gaussian stand-ins for the linear-kernel systems.
//!
//! With `K(x) = -a x` in one dimension, both the interacting and the mean-field
//! dynamics are Ornstein–Uhlenbeck processes, and an exchangeable Gaussian
//! start stays exchangeable Gaussian. The joint law is then described by a
//! per-particle block `s` and a cross-particle block `c` (scalars for first
//! order, 2x2 `(x, v)` blocks for second order), whose covariance has the
//! eigen-blocks `s - c` (multiplicity `N - 1`) and `s + (N - 1) c`.

mod exchangeable;
mod kl;
mod ode;

pub use exchangeable::{ExchangeableGaussian, MeanFieldState};
pub use kl::{dense_joint_kl, exact_joint_kl, exact_marginal_kl};
pub use ode::{
    meanfield_closed_form, propagate_dense_lyapunov, propagate_interacting, propagate_meanfield,
    write_trajectory_csv, OracleSystem, OracleTrajectory, MeanFieldTrajectory, RK_SUBSTEPS,
};
