use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{exact_joint_kl, exact_marginal_kl, ExchangeableGaussian, MeanFieldState};

use super::{GaussianMeasure, INEQ_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingOutcome {
    pub k: usize,
    pub n: usize,
    /// `(1/k) KL(mu^{n:k} || mu_bar^{(x) k})`.
    pub per_k: f64,
    /// `(1/n) KL(mu^n || mu_bar^{(x) n})`.
    pub per_n: f64,
    pub holds: bool,
}

/// Linear scaling of KL for an exchangeable law against a product reference.
pub fn linear_scaling_check(joint: &ExchangeableGaussian, reference: &GaussianMeasure, k: usize) -> Result<ScalingOutcome> {
    joint.validate()?;
    if reference.dim() != joint.block() {
        return Err(Error::DimensionMismatch {
            expected: joint.block(),
            got: reference.dim(),
        });
    }
    if k == 0 || k > joint.n {
        return Err(Error::MarginalOutOfRange { k, n: joint.n });
    }
    let r = MeanFieldState::new(reference.mean().clone(), reference.cov().clone())?;
    let per_k = exact_marginal_kl(joint, k, &r)? / k as f64;
    let per_n = exact_joint_kl(joint, &r)? / joint.n as f64;
    Ok(ScalingOutcome {
        k,
        n: joint.n,
        per_k,
        per_n,
        holds: per_k <= per_n + INEQ_TOL,
    })
}
