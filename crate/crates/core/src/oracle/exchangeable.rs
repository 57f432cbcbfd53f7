use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::info::GaussianMeasure;

const PD_TOL: f64 = 1e-12;

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Gaussian on `(R^b)^N` with covariance `I (x) (s - c) + J (x) c`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExchangeableGaussian {
    pub n: usize,
    /// Per-particle mean (identical across particles).
    pub mean: DVector<f64>,
    pub s: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl ExchangeableGaussian {
    pub fn new(n: usize, mean: DVector<f64>, s: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let g = ExchangeableGaussian { n, mean, s, c };
        g.validate()?;
        Ok(g)
    }

    /// First-order (scalar block) state.
    pub fn scalar(n: usize, mean: f64, s: f64, c: f64) -> Result<Self> {
        Self::new(
            n,
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, s),
            DMatrix::from_element(1, 1, c),
        )
    }

    /// `N` independent copies of one per-particle law.
    pub fn product(n: usize, mean: DVector<f64>, s: DMatrix<f64>) -> Result<Self> {
        let b = mean.len();
        Self::new(n, mean, s, DMatrix::zeros(b, b))
    }

    pub fn block(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.block();
        if self.n == 0 || b == 0 || b > 2 {
            return Err(Error::InvalidParameter(format!(
                "exchangeable Gaussian needs N >= 1 and block size 1 or 2, got N = {}, b = {b}",
                self.n
            )));
        }
        if self.s.shape() != (b, b) || self.c.shape() != (b, b) {
            return Err(Error::ShapeMismatch(format!("s and c must be {b}x{b} blocks")));
        }
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0);
        if !sym(&self.s) || !sym(&self.c) {
            return Err(Error::NotPositiveDefinite("exchangeable blocks must be symmetric".into()));
        }
        let (diff, sum) = self.eigen_blocks();
        if !(min_eig(&diff) > PD_TOL) || !(min_eig(&sum) > PD_TOL) {
            return Err(Error::NotPositiveDefinite(format!(
                "exchangeable covariance needs s - c > 0 and s + (N - 1) c > 0 (N = {})",
                self.n
            )));
        }
        Ok(())
    }

    /// `(s - c, s + (N - 1) c)`.
    pub fn eigen_blocks(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (&self.s - &self.c, &self.s + &self.c * (self.n as f64 - 1.0))
    }

    /// Law of any `k` of the `N` particles.
    pub fn marginal(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n {
            return Err(Error::MarginalOutOfRange { k, n: self.n });
        }
        Ok(ExchangeableGaussian {
            n: k,
            ..self.clone()
        })
    }

    /// Dense `(N b) x (N b)` covariance, particle-major.
    pub fn full_covariance(&self) -> DMatrix<f64> {
        let b = self.block();
        let mut m = DMatrix::zeros(self.n * b, self.n * b);
        for i in 0..self.n {
            for j in 0..self.n {
                let blk = if i == j { &self.s } else { &self.c };
                m.view_mut((i * b, j * b), (b, b)).copy_from(blk);
            }
        }
        m
    }

    pub fn to_measure(&self) -> Result<GaussianMeasure> {
        let b = self.block();
        let mean = DVector::from_fn(self.n * b, |r, _| self.mean[r % b]);
        GaussianMeasure::new(mean, self.full_covariance())
    }

    /// Recovers the `(s, c)` description from a dense law on `(R^b)^n`,
    /// rejecting laws that are not exchangeable.
    pub fn from_measure(g: &GaussianMeasure, n: usize, b: usize) -> Result<Self> {
        if g.dim() != n * b || n == 0 {
            return Err(Error::DimensionMismatch {
                expected: n * b,
                got: g.dim(),
            });
        }
        let cov = g.cov();
        let s = cov.view((0, 0), (b, b)).into_owned();
        let c = if n > 1 {
            cov.view((0, b), (b, b)).into_owned()
        } else {
            DMatrix::zeros(b, b)
        };
        let mean = g.mean().rows(0, b).into_owned();
        let candidate = ExchangeableGaussian::new(n, mean, s, c)?;
        let scale = cov.abs().max().max(1.0);
        let cov_gap = (candidate.full_covariance() - cov).abs().max();
        let mean_gap = candidate.to_measure()?.mean() - g.mean();
        if cov_gap > 1e-12 * scale || mean_gap.abs().max() > 1e-12 * scale {
            return Err(Error::InvalidParameter("Gaussian law is not exchangeable".into()));
        }
        Ok(candidate)
    }
}

/// One-particle mean-field law `N(mean, s)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanFieldState {
    pub mean: DVector<f64>,
    pub s: DMatrix<f64>,
}

impl MeanFieldState {
    pub fn new(mean: DVector<f64>, s: DMatrix<f64>) -> Result<Self> {
        let b = mean.len();
        if s.shape() != (b, b) {
            return Err(Error::ShapeMismatch(format!("mean-field block must be {b}x{b}")));
        }
        if !(min_eig(&s) > PD_TOL) {
            return Err(Error::NotPositiveDefinite("mean-field covariance".into()));
        }
        Ok(MeanFieldState { mean, s })
    }

    pub fn scalar(mean: f64, s: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, s))
    }

    pub fn block(&self) -> usize {
        self.mean.len()
    }

    pub fn to_measure(&self) -> Result<GaussianMeasure> {
        GaussianMeasure::new(self.mean.clone(), self.s.clone())
    }

    /// `N` independent copies as an exchangeable law with `c = 0`.
    pub fn tensorized(&self, n: usize) -> Result<ExchangeableGaussian> {
        ExchangeableGaussian::product(n, self.mean.clone(), self.s.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenstructure_of_three_particles() {
        let g = ExchangeableGaussian::scalar(3, 0.0, 2.0, 1.0).unwrap();
        let e = SymmetricEigen::new(g.full_covariance()).eigenvalues;
        let mut e: Vec<f64> = e.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        for (got, want) in e.iter().zip([1.0, 1.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((g.full_covariance().determinant() - 4.0).abs() < 1e-12);
        let (diff, sum) = g.eigen_blocks();
        assert_eq!((diff[(0, 0)], sum[(0, 0)]), (1.0, 4.0));
    }

    #[test]
    fn positivity_conditions() {
        assert!(ExchangeableGaussian::scalar(4, 0.0, 1.0, 1.0).is_err());
        assert!(ExchangeableGaussian::scalar(4, 0.0, 1.0, -0.4).is_err());
        assert!(ExchangeableGaussian::scalar(4, 0.0, 1.0, -0.3).is_ok());
        assert!(ExchangeableGaussian::scalar(2, 0.0, 1.0, -0.9).is_ok());
        assert!(matches!(
            ExchangeableGaussian::scalar(4, 0.0, 1.0, 0.0).unwrap().marginal(5),
            Err(Error::MarginalOutOfRange { k: 5, n: 4 })
        ));
    }

    #[test]
    fn dense_roundtrip_and_exchangeability() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let c = DMatrix::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.02]);
        let g = ExchangeableGaussian::new(3, DVector::from_vec(vec![0.5, -1.0]), s, c).unwrap();
        let back = ExchangeableGaussian::from_measure(&g.to_measure().unwrap(), 3, 2).unwrap();
        assert_eq!(back, g);
        let mut cov = g.full_covariance();
        cov[(0, 0)] += 0.1;
        let skew = GaussianMeasure::new(g.to_measure().unwrap().mean().clone(), cov).unwrap();
        assert!(ExchangeableGaussian::from_measure(&skew, 3, 2).is_err());
    }
}
