use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::rng::{Domain, RngPolicy};
use crate::error::{Error, Result};

/// Law of a single particle's initial state. Particles are always drawn
/// i.i.d. from it, so the joint initial law is the N-fold product.
///
/// For second-order systems the state is `(x, v)` of length `2d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum InitialLaw {
    GaussianIid { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    DeterministicPoint { point: Vec<f64> },
    /// Whitespace- or comma-separated rows, one state per line; sampled uniformly with replacement.
    EmpiricalFile { path: PathBuf },
}

impl InitialLaw {
    /// Isotropic Gaussian `N(mean * 1, var * I)` on `R^dim`.
    pub fn isotropic_gaussian(dim: usize, mean: f64, var: f64) -> Self {
        InitialLaw::GaussianIid {
            mean: vec![mean; dim],
            cov: (0..dim)
                .map(|r| (0..dim).map(|c| if r == c { var } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn sampler(&self, state_dim: usize) -> Result<InitialSampler> {
        match self {
            InitialLaw::GaussianIid { mean, cov } => {
                if mean.len() != state_dim {
                    return Err(Error::DimensionMismatch {
                        expected: state_dim,
                        got: mean.len(),
                    });
                }
                if cov.len() != state_dim || cov.iter().any(|r| r.len() != state_dim) {
                    return Err(Error::ShapeMismatch(format!(
                        "initial covariance must be {state_dim}x{state_dim}"
                    )));
                }
                let m = DMatrix::from_fn(state_dim, state_dim, |r, c| cov[r][c]);
                if (&m - m.transpose()).amax() > 1e-12 {
                    return Err(Error::InvalidParameter("initial covariance not symmetric".into()));
                }
                // Allow singular (e.g. deterministic velocity) blocks via an eigen square root.
                let eig = m.symmetric_eigen();
                if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
                    return Err(Error::NotPositiveDefinite("initial covariance".into()));
                }
                let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
                let factor = &eig.eigenvectors * sqrt_l;
                Ok(InitialSampler::Gaussian {
                    mean: DVector::from_column_slice(mean),
                    factor,
                })
            }
            InitialLaw::DeterministicPoint { point } => {
                if point.len() != state_dim {
                    return Err(Error::DimensionMismatch {
                        expected: state_dim,
                        got: point.len(),
                    });
                }
                Ok(InitialSampler::Point(point.clone()))
            }
            InitialLaw::EmpiricalFile { path } => {
                let rows = read_state_rows(path, state_dim)?;
                Ok(InitialSampler::Empirical { rows, state_dim })
            }
        }
    }
}

fn read_state_rows(path: &Path, state_dim: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let vals = vals.map_err(|e| {
            Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if vals.len() != state_dim {
            return Err(Error::DimensionMismatch {
                expected: state_dim,
                got: vals.len(),
            });
        }
        rows.extend(vals);
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{} holds no states", path.display())));
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub enum InitialSampler {
    Gaussian { mean: DVector<f64>, factor: DMatrix<f64> },
    Point(Vec<f64>),
    Empirical { rows: Vec<f64>, state_dim: usize },
}

impl InitialSampler {
    /// Draws `n` i.i.d. states; particle `p` uses its own keyed stream.
    pub fn sample(&self, policy: &RngPolicy, domain: Domain, realization: u64, n: usize) -> Vec<f64> {
        let dim = self.state_dim();
        let mut out = vec![0.0; n * dim];
        for (p, state) in out.chunks_exact_mut(dim).enumerate() {
            let mut g = policy.gaussian(domain, realization, p as u64);
            match self {
                InitialSampler::Gaussian { mean, factor } => {
                    let mut z = vec![0.0; dim];
                    g.fill_block(&mut z, 1.0);
                    for r in 0..dim {
                        let mut acc = mean[r];
                        for c in 0..dim {
                            acc += factor[(r, c)] * z[c];
                        }
                        state[r] = acc;
                    }
                }
                InitialSampler::Point(x) => state.copy_from_slice(x),
                InitialSampler::Empirical { rows, state_dim } => {
                    let count = rows.len() / state_dim;
                    let k = g.index(count);
                    state.copy_from_slice(&rows[k * state_dim..(k + 1) * state_dim]);
                }
            }
        }
        out
    }

    pub fn state_dim(&self) -> usize {
        match self {
            InitialSampler::Gaussian { mean, .. } => mean.len(),
            InitialSampler::Point(x) => x.len(),
            InitialSampler::Empirical { state_dim, .. } => *state_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn gaussian_sampler_moments() {
        let law = InitialLaw::GaussianIid {
            mean: vec![1.0, -2.0],
            cov: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
        };
        let s = law.sampler(2).unwrap();
        let xs = s.sample(&RngPolicy::new(3), Domain::Init, 0, 50_000);
        let n = 50_000.0;
        let m0 = xs.chunks(2).map(|p| p[0]).sum::<f64>() / n;
        let m1 = xs.chunks(2).map(|p| p[1]).sum::<f64>() / n;
        let c01 = xs.chunks(2).map(|p| (p[0] - m0) * (p[1] - m1)).sum::<f64>() / n;
        assert!((m0 - 1.0).abs() < 0.03);
        assert!((m1 + 2.0).abs() < 0.03);
        assert!((c01 - 0.5).abs() < 0.03);
    }

    #[test]
    fn point_and_dimension_errors() {
        let law = InitialLaw::DeterministicPoint { point: vec![0.5, 1.0] };
        let s = law.sampler(2).unwrap();
        assert_eq!(s.sample(&RngPolicy::new(0), Domain::Init, 0, 3), vec![0.5, 1.0, 0.5, 1.0, 0.5, 1.0]);
        assert!(law.sampler(1).is_err());
        let bad = InitialLaw::GaussianIid {
            mean: vec![0.0],
            cov: vec![vec![-1.0]],
        };
        assert!(bad.sampler(1).is_err());
    }

    #[test]
    fn empirical_file_resamples_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# x v").unwrap();
        writeln!(f, "1.0, 2.0").unwrap();
        writeln!(f, "3.0 4.0").unwrap();
        let law = InitialLaw::EmpiricalFile { path: f.path().to_path_buf() };
        let s = law.sampler(2).unwrap();
        let xs = s.sample(&RngPolicy::new(9), Domain::Init, 1, 100);
        assert!(xs.chunks(2).all(|p| p == [1.0, 2.0] || p == [3.0, 4.0]));
        assert!(xs.chunks(2).any(|p| p == [1.0, 2.0]));
        assert!(xs.chunks(2).any(|p| p == [3.0, 4.0]));
        assert!(law.sampler(3).is_err());
    }
}
