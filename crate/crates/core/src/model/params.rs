use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest eigenvalue of `sigma sigma^T` below which the diffusion counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Physical and noise parameters shared by every particle.
///
/// `lambda_mat = sigma sigma^T` is always recomputed from `sigma`. A degenerate
/// `sigma` is accepted here (the free-flight engine tests need `sigma = 0`);
/// every KL-related operation goes through [`SystemParams::nondegenerate_lambda`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SystemParams {
    pub d: usize,
    pub d_prime: usize,
    pub mass: f64,
    pub gamma: f64,
    pub sigma: DMatrix<f64>,
    pub lambda_mat: DMatrix<f64>,
    pub lambda_min: f64,
    /// `sigma^T Lambda^{-1}` (d' x d) when the diffusion is non-degenerate.
    girsanov_weight: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawParams {
    mass: f64,
    gamma: f64,
    /// Row-major `d x d'`.
    sigma: Vec<Vec<f64>>,
}

impl TryFrom<RawParams> for SystemParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        SystemParams::new(sigma_from_rows(&raw.sigma)?, raw.mass, raw.gamma)
    }
}

impl From<SystemParams> for RawParams {
    fn from(p: SystemParams) -> Self {
        RawParams {
            mass: p.mass,
            gamma: p.gamma,
            sigma: (0..p.d)
                .map(|r| (0..p.d_prime).map(|c| p.sigma[(r, c)]).collect())
                .collect(),
        }
    }
}

/// Builds a `d x d'` matrix from rows.
pub fn sigma_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows[0].is_empty() {
        return Err(Error::InvalidParameter("sigma must be non-empty".into()));
    }
    let dp = rows[0].len();
    if rows.iter().any(|r| r.len() != dp) {
        return Err(Error::ShapeMismatch("sigma rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(d, dp, |r, c| rows[r][c]))
}

impl SystemParams {
    pub fn new(sigma: DMatrix<f64>, mass: f64, gamma: f64) -> Result<Self> {
        if sigma.nrows() == 0 || sigma.ncols() == 0 {
            return Err(Error::InvalidParameter("sigma must be non-empty".into()));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be finite".into()));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be > 0, got {mass}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
        }
        let lambda_mat = &sigma * sigma.transpose();
        let lambda_min = smallest_eigenvalue(&lambda_mat);
        let girsanov_weight = if lambda_min > DEGENERACY_TOL {
            let inv = lambda_mat
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("sigma sigma^T".into()))?
                .inverse();
            Some(sigma.transpose() * inv)
        } else {
            None
        };
        Ok(SystemParams {
            d: sigma.nrows(),
            d_prime: sigma.ncols(),
            mass,
            gamma,
            sigma,
            lambda_mat,
            lambda_min,
            girsanov_weight,
        })
    }

    /// `sigma = s I_d`.
    pub fn isotropic(d: usize, s: f64, mass: f64, gamma: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(d, d, s), mass, gamma)
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(self.sigma.clone(), mass, self.gamma)
    }

    /// `lambda > 0` or `DegenerateDiffusion`.
    pub fn nondegenerate_lambda(&self) -> Result<f64> {
        if self.lambda_min > DEGENERACY_TOL {
            Ok(self.lambda_min)
        } else {
            Err(Error::DegenerateDiffusion {
                lambda: self.lambda_min,
            })
        }
    }

    pub fn girsanov_weight(&self) -> Result<&DMatrix<f64>> {
        self.girsanov_weight.as_ref().ok_or(Error::DegenerateDiffusion {
            lambda: self.lambda_min,
        })
    }

    /// `out = sigma * dw` without allocating.
    #[inline]
    pub fn apply_sigma(&self, dw: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, w) in dw.iter().enumerate() {
                acc += self.sigma[(r, c)] * w;
            }
            *o = acc;
        }
    }
}

fn smallest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of `sigma sigma^T`; errors when it does not exceed 1e-10.
pub fn lambda_min_of(sigma: &DMatrix<f64>) -> Result<f64> {
    let lambda = smallest_eigenvalue(&(sigma * sigma.transpose()));
    if lambda > DEGENERACY_TOL {
        Ok(lambda)
    } else {
        Err(Error::DegenerateDiffusion { lambda })
    }
}

/// Uniform grid `t_n = n dt` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    n_steps: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawGrid {
    t: f64,
    dt: f64,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;
    fn try_from(r: RawGrid) -> Result<Self> {
        TimeGrid::new(r.t, r.dt)
    }
}

impl From<TimeGrid> for RawGrid {
    fn from(g: TimeGrid) -> Self {
        RawGrid { t: g.horizon, dt: g.dt }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0 && dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time grid needs T > 0 and dt > 0, got T={horizon}, dt={dt}"
            )));
        }
        let n_steps = (horizon / dt).round() as usize;
        if n_steps < 1 || ((n_steps as f64 * dt - horizon) / horizon).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "T={horizon} is not an integer multiple of dt={dt}"
            )));
        }
        Ok(TimeGrid {
            horizon,
            dt,
            n_steps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Nearest grid index to `t`.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(((t / self.dt).round() as usize).min(self.n_steps))
    }

    /// Grids match when they have the same step count and step size.
    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && (self.dt - other.dt).abs() <= 1e-15 * self.dt
    }

    pub fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{} steps of {} vs {} steps of {}",
                self.n_steps, self.dt, other.n_steps, other.dt
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn lambda_min_examples() {
        assert!((lambda_min_of(&DMatrix::identity(2, 2)).unwrap() - 1.0).abs() < 1e-14);
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert!((lambda_min_of(&diag).unwrap() - 1.0).abs() < 1e-14);
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let expected = (3.0 - 5f64.sqrt()) / 2.0;
        assert!((lambda_min_of(&shear).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.381966).abs() < 1e-6);
    }

    #[test]
    fn degenerate_sigma_rejected() {
        let s = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(lambda_min_of(&s), Err(Error::DegenerateDiffusion { .. })));
        let p = SystemParams::new(s, 1.0, 1.0).unwrap();
        assert!(p.nondegenerate_lambda().is_err());
        assert!(p.girsanov_weight().is_err());
    }

    #[test]
    fn params_validation() {
        let s = DMatrix::identity(1, 1);
        assert!(SystemParams::new(s.clone(), 0.0, 1.0).is_err());
        assert!(SystemParams::new(s.clone(), 1.0, -0.1).is_err());
        assert!(SystemParams::new(s.clone(), f64::NAN, 1.0).is_err());
        let p = SystemParams::new(s, 2.0, 0.0).unwrap();
        assert_eq!(p.lambda_mat[(0, 0)], 1.0);
        assert_eq!(p.nondegenerate_lambda().unwrap(), 1.0);
    }

    #[test]
    fn params_roundtrip_through_toml() {
        let p = SystemParams::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]), 0.5, 1.5)
            .unwrap();
        let text = toml::to_string(&p).unwrap();
        let back: SystemParams = toml::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn grid_arithmetic() {
        let g = TimeGrid::new(1.0, 0.01).unwrap();
        assert_eq!(g.n_steps(), 100);
        assert_eq!(g.step_of(0.5).unwrap(), 50);
        assert_eq!(g.step_of(1.0).unwrap(), 100);
        assert!(g.step_of(1.5).is_err());
        assert!(g.step_of(-0.1).is_err());
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 0.1).is_err());
        let g = TimeGrid::new(4.0, 1e-3).unwrap();
        assert_eq!(g.n_steps(), 4000);
    }

    fn random_orthogonal(seed: [f64; 9]) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &seed).qr().q()
    }

    proptest! {
        #[test]
        fn lambda_min_invariant_under_noise_rotation(
            s in proptest::array::uniform9(-2.0f64..2.0),
            q in proptest::array::uniform9(-1.0f64..1.0),
        ) {
            let sigma = DMatrix::from_row_slice(3, 3, &s) + DMatrix::identity(3, 3) * 3.0;
            let rotated = &sigma * random_orthogonal(q);
            let a = lambda_min_of(&sigma).unwrap();
            let b = lambda_min_of(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
