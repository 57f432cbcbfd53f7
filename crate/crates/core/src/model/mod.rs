//! Kernels, parameters, time grids, initial laws and keyed randomness.

pub mod init;
pub mod kernel;
pub mod params;
pub mod rng;

pub use init::{InitialLaw, InitialSampler};
pub use kernel::{kernel_eval, kernel_sup_norm, ConvolutionMoments, KernelSpec, GAUSS_BUMP_PEAK};
pub use params::{lambda_min_of, sigma_from_rows, SystemParams, TimeGrid, DEGENERACY_TOL};
pub use rng::{Domain, GaussianStream, RngPolicy};
