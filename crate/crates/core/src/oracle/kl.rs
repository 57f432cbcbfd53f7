use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::info::gaussian_kl;

use super::{ExchangeableGaussian, MeanFieldState};

fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    let l = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("oracle block".into()))?;
    Ok(2.0 * l.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `KL(P || N(mean, s_bar)^{(x) N})` through the eigen-blocks of `P`.
pub fn exact_joint_kl(p: &ExchangeableGaussian, reference: &MeanFieldState) -> Result<f64> {
    let b = p.block();
    if reference.block() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: reference.block(),
        });
    }
    p.validate()?;
    let n = p.n as f64;
    let ref_chol = reference
        .s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("mean-field covariance".into()))?;
    let trace = n * ref_chol.solve(&p.s).trace();
    let delta = &reference.mean - &p.mean;
    let quad = n * delta.dot(&ref_chol.solve(&delta));
    let (diff, sum) = p.eigen_blocks();
    let log_det_p = (n - 1.0) * log_det(&diff)? + log_det(&sum)?;
    let log_det_ref = n * log_det(&reference.s)?;
    let kl = 0.5 * (trace - n * b as f64 + quad + log_det_ref - log_det_p);
    Ok(kl.max(0.0))
}

/// The same quantity for the law of `k` of the `N` particles.
pub fn exact_marginal_kl(p: &ExchangeableGaussian, k: usize, reference: &MeanFieldState) -> Result<f64> {
    exact_joint_kl(&p.marginal(k)?, reference)
}

/// Independent route: dense covariance matrices and a generic Cholesky KL.
pub fn dense_joint_kl(p: &ExchangeableGaussian, reference: &MeanFieldState) -> Result<f64> {
    gaussian_kl(&p.to_measure()?, &reference.tensorized(p.n)?.to_measure()?)
}
