//! Divergences, inequality harnesses and empirical estimators.

mod concentration;
mod discrete;
mod gaussian;
mod knn;
mod scaling;

pub use concentration::{
    concentration_suite, mz_increments_from_cloud, mz_inequality_check, ConcentrationReport, MzOutcome,
};
pub use discrete::{
    dpi_check, dpi_fuzz, f_divergence, fenchel_young_check, fenchel_young_fuzz, kl_nonnegativity_fuzz, Channel,
    DiscreteMeasure, FDivergence, FuzzSummary, InequalityOutcome, INEQ_TOL,
};
pub use gaussian::{gaussian_kl, gaussian_tv_1d, pinsker_tv, GaussianMeasure};
pub use knn::{knn_kl_estimate, KNN_DIST_FLOOR, KNN_MAX_DIM, KNN_MIN_SAMPLES};
pub use scaling::{linear_scaling_check, ScalingOutcome};
