use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const PD_TOL: f64 = 1e-12;

/// Multivariate normal law with a strictly positive definite covariance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite(format!("covariance is not symmetric (gap {asym:e})")));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if !(min_eig > PD_TOL) {
            return Err(Error::NotPositiveDefinite(format!("covariance eigenvalue {min_eig:e}")));
        }
        Ok(GaussianMeasure { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Law of `X + Z` with `Z ~ N(0, noise_cov)` independent of `X`.
    pub fn add_noise(&self, noise_cov: &DMatrix<f64>) -> Result<Self> {
        if noise_cov.shape() != self.cov.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: noise_cov.nrows(),
            });
        }
        Self::new(self.mean.clone(), &self.cov + noise_cov)
    }

    /// Additive isotropic channel `X + Z_m`, `Z_m ~ N(0, m^{-2} I)`.
    pub fn through_mass_channel(&self, m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidParameter(format!("channel mass must be positive, got {m}")));
        }
        self.add_noise(&(DMatrix::identity(self.dim(), self.dim()) / (m * m)))
    }
}

/// `KL(P || Q)` in closed form through a Cholesky factor of `Sigma_Q`.
pub fn gaussian_kl(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: q.dim(),
        });
    }
    let factor = |m: &DMatrix<f64>| {
        m.clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))
    };
    let lq = factor(&q.cov)?;
    let lp = factor(&p.cov)?;
    let trace = lq.solve(&p.cov).trace();
    let diff = &q.mean - &p.mean;
    let quad = diff.dot(&lq.solve(&diff));
    let log_det = |l: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * l.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (trace - d as f64 + quad + log_det(&lq) - log_det(&lp));
    Ok(kl.max(0.0))
}

/// Upper bound `sqrt(KL / 2)` on the total variation distance.
pub fn pinsker_tv(kl: f64) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(Error::InvalidParameter(format!("KL must be nonnegative, got {kl}")));
    }
    Ok((0.5 * kl).sqrt())
}

/// Exact total variation between two one-dimensional normals, integrating the
/// density difference between its sign changes.
pub fn gaussian_tv_1d(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: p.dim().max(q.dim()),
        });
    }
    let (m1, s1) = (p.mean[0], p.cov[(0, 0)].sqrt());
    let (m2, s2) = (q.mean[0], q.cov[(0, 0)].sqrt());
    let a = Normal::new(m1, s1).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let b = Normal::new(m2, s2).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let roots: Vec<f64> = if (s1 - s2).abs() <= 1e-14 * s1 {
        vec![0.5 * (m1 + m2)]
    } else {
        // log-density difference is a quadratic in x
        let qa = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
        let qb = m1 / (s1 * s1) - m2 / (s2 * s2);
        let qc = 0.5 * m2 * m2 / (s2 * s2) - 0.5 * m1 * m1 / (s1 * s1) + (s2 / s1).ln();
        let disc = (qb * qb - 4.0 * qa * qc).sqrt();
        let mut r = vec![(-qb - disc) / (2.0 * qa), (-qb + disc) / (2.0 * qa)];
        r.sort_by(f64::total_cmp);
        r
    };
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(roots);
    edges.push(f64::INFINITY);
    Ok(0.5
        * edges
            .windows(2)
            .map(|w| ((a.cdf(w[1]) - a.cdf(w[0])) - (b.cdf(w[1]) - b.cdf(w[0]))).abs())
            .sum::<f64>())
}
