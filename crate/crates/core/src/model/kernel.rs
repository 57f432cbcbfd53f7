//! Interaction kernels `K: R^d -> R^d`.
//!
//! Four bounded variants carry an analytic sup-norm. The `Linear` variant
//! `K(x) = -a x` is unbounded and exists so that linear systems can be
//! checked against closed-form Gaussian laws; every operation that needs
//! `‖K‖∞` refuses it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1/sqrt(2e)`: the maximum of `r exp(-r^2)` over `r >= 0`, attained at `r = 1/sqrt(2)`.
pub const GAUSS_BUMP_PEAK: f64 = 0.428_881_942_480_353_4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelSpec {
    Zero,
    /// `K(x) = c` for every `x`.
    Constant { c: Vec<f64> },
    /// `K(x) = kappa (sin(omega x_1), ..., sin(omega x_d))`.
    Sine { kappa: f64, omega: f64 },
    /// `K(x) = kappa x exp(-|x|^2)`.
    GaussBump { kappa: f64 },
    /// `K(x) = -a x`. Oracle-only: violates the bounded-kernel assumption.
    Linear { a: f64 },
}

impl KernelSpec {
    pub fn zero() -> Self {
        KernelSpec::Zero
    }

    pub fn constant(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("constant kernel must be finite".into()));
        }
        Ok(KernelSpec::Constant { c })
    }

    pub fn sine(kappa: f64, omega: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sine kernel needs finite kappa >= 0 and finite omega, got kappa={kappa}, omega={omega}"
            )));
        }
        Ok(KernelSpec::Sine { kappa, omega })
    }

    pub fn gauss_bump(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gauss bump needs finite kappa >= 0, got {kappa}"
            )));
        }
        Ok(KernelSpec::GaussBump { kappa })
    }

    /// The unbounded linear kernel. Callers opt in explicitly because no
    /// bounded-kernel estimate applies to it.
    pub fn linear_oracle_only(a: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "linear kernel slope must be finite and >= 0, got {a}"
            )));
        }
        log::warn!("linear kernel K(x) = -{a} x is unbounded: oracle-only");
        Ok(KernelSpec::Linear { a })
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Zero => "zero",
            KernelSpec::Constant { .. } => "constant",
            KernelSpec::Sine { .. } => "sine",
            KernelSpec::GaussBump { .. } => "gauss_bump",
            KernelSpec::Linear { .. } => "linear",
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, KernelSpec::Linear { .. })
    }

    /// `K(-x) = -K(x)` holds for every variant except `Constant`.
    pub fn is_odd(&self) -> bool {
        !matches!(self, KernelSpec::Constant { .. })
    }

    /// Checks that the kernel can act on `R^d`.
    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        match self {
            KernelSpec::Constant { c } if c.len() != d => Err(Error::DimensionMismatch {
                expected: d,
                got: c.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Writes `K(x)` into `out`. No length checks; see [`kernel_eval`] for the checked form.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            KernelSpec::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            KernelSpec::Constant { c } => out.copy_from_slice(c),
            KernelSpec::Sine { kappa, omega } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = kappa * (omega * xi).sin();
                }
            }
            KernelSpec::GaussBump { kappa } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let scale = kappa * (-r2).exp();
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = scale * xi;
                }
            }
            KernelSpec::Linear { a } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -a * xi;
                }
            }
        }
    }

    /// Analytic `‖K‖∞` on `R^d`.
    pub fn sup_norm(&self, d: usize) -> Result<f64> {
        self.check_dim(d)?;
        Ok(match self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Constant { c } => c.iter().map(|v| v * v).sum::<f64>().sqrt(),
            KernelSpec::Sine { kappa, .. } => kappa * (d as f64).sqrt(),
            KernelSpec::GaussBump { kappa } => kappa * GAUSS_BUMP_PEAK,
            KernelSpec::Linear { .. } => return Err(Error::UnboundedKernel("linear")),
        })
    }

    /// `(1/M) sum_m K(x - y_m)` over a flat list of points with stride `stride`
    /// whose first `x.len()` coordinates are positions.
    pub fn convolve_direct(&self, x: &[f64], points: &[f64], stride: usize, out: &mut [f64]) {
        let d = x.len();
        let count = points.len() / stride;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut diff = vec![0.0; d];
        let mut k = vec![0.0; d];
        for p in points.chunks_exact(stride) {
            for ((df, &xi), &yi) in diff.iter_mut().zip(x).zip(&p[..d]) {
                *df = xi - yi;
            }
            self.eval_into(&diff, &mut k);
            for (o, kv) in out.iter_mut().zip(&k) {
                *o += kv;
            }
        }
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
}

/// Checked evaluation of `K(x)`.
pub fn kernel_eval(k: &KernelSpec, x: &[f64]) -> Result<Vec<f64>> {
    k.check_dim(x.len())?;
    let mut out = vec![0.0; x.len()];
    k.eval_into(x, &mut out);
    Ok(out)
}

pub fn kernel_sup_norm(k: &KernelSpec, d: usize) -> Result<f64> {
    k.sup_norm(d)
}

/// Summary of an empirical measure that lets `K * mu(x)` be evaluated in
/// O(d) instead of O(M) for the kernels that factor through a few moments.
///
/// Sine: `sin(w(x - y)) = sin(wx)cos(wy) - cos(wx)sin(wy)`; linear: only the mean matters.
#[derive(Clone, Debug)]
pub enum ConvolutionMoments {
    Zero,
    Constant(Vec<f64>),
    Sine {
        kappa: f64,
        omega: f64,
        mean_sin: Vec<f64>,
        mean_cos: Vec<f64>,
    },
    Linear { a: f64, mean: Vec<f64> },
    /// No factorization; evaluate the sum directly.
    Direct,
}

impl ConvolutionMoments {
    /// Moments of the points `points` (stride `stride`, positions first `d` coordinates).
    pub fn compute(kernel: &KernelSpec, points: &[f64], stride: usize, d: usize) -> Self {
        let count = points.len() / stride;
        let inv = 1.0 / count as f64;
        match kernel {
            KernelSpec::Zero => ConvolutionMoments::Zero,
            KernelSpec::Constant { c } => ConvolutionMoments::Constant(c.clone()),
            KernelSpec::Sine { kappa, omega } => {
                let mut mean_sin = vec![0.0; d];
                let mut mean_cos = vec![0.0; d];
                for p in points.chunks_exact(stride) {
                    for k in 0..d {
                        let (s, c) = (omega * p[k]).sin_cos();
                        mean_sin[k] += s;
                        mean_cos[k] += c;
                    }
                }
                mean_sin.iter_mut().for_each(|v| *v *= inv);
                mean_cos.iter_mut().for_each(|v| *v *= inv);
                ConvolutionMoments::Sine {
                    kappa: *kappa,
                    omega: *omega,
                    mean_sin,
                    mean_cos,
                }
            }
            KernelSpec::Linear { a } => {
                let mut mean = vec![0.0; d];
                for p in points.chunks_exact(stride) {
                    for k in 0..d {
                        mean[k] += p[k];
                    }
                }
                mean.iter_mut().for_each(|v| *v *= inv);
                ConvolutionMoments::Linear { a: *a, mean }
            }
            KernelSpec::GaussBump { .. } => ConvolutionMoments::Direct,
        }
    }

    /// Evaluates `K * mu(x)`; returns `false` when the caller must fall back to the direct sum.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match self {
            ConvolutionMoments::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            ConvolutionMoments::Constant(c) => out.copy_from_slice(c),
            ConvolutionMoments::Sine {
                kappa,
                omega,
                mean_sin,
                mean_cos,
            } => {
                for k in 0..x.len() {
                    let (s, c) = (omega * x[k]).sin_cos();
                    out[k] = kappa * (s * mean_cos[k] - c * mean_sin[k]);
                }
            }
            ConvolutionMoments::Linear { a, mean } => {
                for k in 0..x.len() {
                    out[k] = -a * (x[k] - mean[k]);
                }
            }
            ConvolutionMoments::Direct => return false,
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eval_examples() {
        assert_eq!(kernel_eval(&KernelSpec::Zero, &[3.7]).unwrap(), vec![0.0]);
        let s = KernelSpec::sine(1.0, 1.0).unwrap();
        assert_eq!(kernel_eval(&s, &[0.0]).unwrap(), vec![0.0]);
        let g = KernelSpec::gauss_bump(1.0).unwrap();
        let v = kernel_eval(&g, &[1.0]).unwrap()[0];
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn constant_dimension_checked() {
        let c = KernelSpec::constant(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            kernel_eval(&c, &[0.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(KernelSpec::Zero.sup_norm(1).unwrap(), 0.0);
        assert_eq!(KernelSpec::sine(2.0, 3.0).unwrap().sup_norm(1).unwrap(), 2.0);
        assert_eq!(KernelSpec::sine(1.0, 1.0).unwrap().sup_norm(4).unwrap(), 2.0);
        let c = KernelSpec::constant(vec![3.0, 4.0]).unwrap();
        assert_eq!(c.sup_norm(2).unwrap(), 5.0);
        let gb = KernelSpec::gauss_bump(1.0).unwrap().sup_norm(1).unwrap();
        assert!((gb - 1.0 / (2.0 * std::f64::consts::E).sqrt()).abs() < 1e-15);
        assert!((gb - 0.428882).abs() < 1e-6);
        // grid search over r in [0, 5]
        let grid_max = (0..=500_000)
            .map(|i| {
                let r = i as f64 * 1e-5;
                r * (-r * r).exp()
            })
            .fold(0.0f64, f64::max);
        assert!((grid_max - gb).abs() < 1e-9);
    }

    #[test]
    fn linear_rejects_sup_norm() {
        let l = KernelSpec::linear_oracle_only(0.5).unwrap();
        assert!(!l.is_bounded());
        assert!(matches!(l.sup_norm(1), Err(Error::UnboundedKernel(_))));
    }

    #[test]
    fn moments_agree_with_direct_sum() {
        let pts: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 * 0.07 - 3.0).collect();
        let x = [0.3, -1.1];
        for kernel in [
            KernelSpec::Zero,
            KernelSpec::constant(vec![0.5, -2.0]).unwrap(),
            KernelSpec::sine(1.3, 0.7).unwrap(),
            KernelSpec::Linear { a: 0.5 },
        ] {
            let m = ConvolutionMoments::compute(&kernel, &pts, 2, 2);
            let mut fast = [0.0; 2];
            assert!(m.eval_into(&x, &mut fast));
            let mut slow = [0.0; 2];
            kernel.convolve_direct(&x, &pts, 2, &mut slow);
            for k in 0..2 {
                assert!((fast[k] - slow[k]).abs() < 1e-12, "{kernel:?}");
            }
        }
        let m = ConvolutionMoments::compute(&KernelSpec::GaussBump { kappa: 1.0 }, &pts, 2, 2);
        assert!(!m.eval_into(&x, &mut [0.0; 2]));
    }

    fn bounded_kernels(d: usize) -> Vec<KernelSpec> {
        vec![
            KernelSpec::Zero,
            KernelSpec::constant((0..d).map(|k| k as f64 - 0.5).collect()).unwrap(),
            KernelSpec::sine(1.7, 2.3).unwrap(),
            KernelSpec::gauss_bump(0.9).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn bounded_variants_respect_sup_norm(
            x in proptest::collection::vec(-50.0f64..50.0, 1..4),
        ) {
            for k in bounded_kernels(x.len()) {
                let v = kernel_eval(&k, &x).unwrap();
                prop_assert_eq!(v.len(), x.len());
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                prop_assert!(norm <= k.sup_norm(x.len()).unwrap() + 1e-12);
            }
        }

        #[test]
        fn odd_kernels_negate_exactly(x in proptest::collection::vec(-1e3f64..1e3, 1..4)) {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            for k in bounded_kernels(x.len()).into_iter().chain([KernelSpec::Linear { a: 0.3 }]) {
                if !k.is_odd() {
                    continue;
                }
                let a = kernel_eval(&k, &x).unwrap();
                let b = kernel_eval(&k, &neg).unwrap();
                for (p, q) in a.iter().zip(&b) {
                    prop_assert_eq!(*p, -*q);
                }
            }
        }
    }
}
