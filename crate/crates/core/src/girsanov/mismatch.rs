use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{KernelSpec, SystemParams, TimeGrid};
use crate::sde::{pairwise_field, CloudDrift, PathBundle, ReferenceCloud};

/// Raw and weighted drift mismatch at every grid point of a bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftMismatch {
    pub n: usize,
    pub d: usize,
    pub d_prime: usize,
    pub grid: TimeGrid,
    /// `b_i(t_n)`, `(step, particle, d)` for steps `0..=n_steps`.
    pub raw: Vec<f64>,
    /// `sigma^T Lambda^{-1} (-b_i(t_n))`, `(step, particle, d')`.
    pub weighted: Vec<f64>,
}

impl DriftMismatch {
    pub fn raw_at(&self, step: usize, particle: usize) -> &[f64] {
        let o = (step * self.n + particle) * self.d;
        &self.raw[o..o + self.d]
    }

    pub fn weighted_at(&self, step: usize, particle: usize) -> &[f64] {
        let o = (step * self.n + particle) * self.d_prime;
        &self.weighted[o..o + self.d_prime]
    }
}

/// `out = W (-b)` for the Girsanov weight `W = sigma^T Lambda^{-1}`.
#[inline]
pub(crate) fn weigh(w: &DMatrix<f64>, b: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, bc) in b.iter().enumerate() {
            acc -= w[(r, c)] * bc;
        }
        *o = acc;
    }
}

/// Evaluates `b_i = (1/(N-1)) sum_{j != i} K(X_i - X_j) - K * rho_t(X_i)` along a stored path.
pub fn drift_mismatch(
    bundle: &PathBundle,
    cloud: Option<&ReferenceCloud>,
    kernel: &KernelSpec,
    params: &SystemParams,
) -> Result<DriftMismatch> {
    if bundle.n < 2 {
        return Err(Error::TooFewParticles(bundle.n));
    }
    if bundle.d != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: bundle.d,
        });
    }
    let w = params.girsanov_weight()?;
    let table = CloudDrift::new(kernel, cloud, &bundle.grid, bundle.d)?;
    let (n, d, dp) = (bundle.n, bundle.d, params.d_prime);
    let steps = bundle.grid.n_steps() + 1;
    let mut raw = vec![0.0; steps * n * d];
    let mut weighted = vec![0.0; steps * n * dp];
    let mut conv = vec![0.0; d];
    for step in 0..steps {
        let x = bundle.positions_at(step);
        let row = &mut raw[step * n * d..(step + 1) * n * d];
        pairwise_field(kernel, &x, n, d, row);
        for p in 0..n {
            table.eval_into(step, &x[p * d..(p + 1) * d], &mut conv);
            for c in 0..d {
                row[p * d + c] -= conv[c];
            }
            weigh(
                w,
                &row[p * d..(p + 1) * d],
                &mut weighted[(step * n + p) * dp..(step * n + p + 1) * dp],
            );
        }
    }
    Ok(DriftMismatch {
        n,
        d,
        d_prime: dp,
        grid: bundle.grid,
        raw,
        weighted,
    })
}

/// `log dQ^2/dQ^1 = sum_n sum_i [bb_i(t_n) . dW_i,n - |bb_i(t_n)|^2 dt / 2]`.
pub fn log_rn_derivative(mismatch: &DriftMismatch, bundle: &PathBundle, params: &SystemParams) -> Result<f64> {
    let (_, dp) = bundle
        .brownian_increments()
        .ok_or_else(|| Error::InvalidParameter("bundle carries no Brownian increments".into()))?;
    if dp != params.d_prime || mismatch.d_prime != dp {
        return Err(Error::DimensionMismatch {
            expected: params.d_prime,
            got: dp,
        });
    }
    if mismatch.n != bundle.n || !mismatch.grid.same_as(&bundle.grid) {
        return Err(Error::ShapeMismatch("mismatch was not computed from this bundle".into()));
    }
    let dt = bundle.grid.dt();
    let mut total = 0.0;
    for step in 0..bundle.grid.n_steps() {
        for p in 0..bundle.n {
            total += rn_term(mismatch.weighted_at(step, p), bundle.increment(step, p).unwrap(), dt);
        }
    }
    Ok(total)
}

#[inline]
pub(crate) fn rn_term(bb: &[f64], dw: &[f64], dt: f64) -> f64 {
    let mut dot = 0.0;
    let mut sq = 0.0;
    for (b, w) in bb.iter().zip(dw) {
        dot += b * w;
        sq += b * b;
    }
    dot - 0.5 * sq * dt
}
