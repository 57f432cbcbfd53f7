use std::f64::consts::{E, LN_2, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};

/// `4 sqrt(2) e`, the factor that fixes the admissible range of `eta`.
pub const FOUR_SQRT2_E: f64 = 4.0 * SQRT_2 * E;

/// Beyond this exponent the Gronwall curve is reported as `+inf`.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub k_sup: f64,
    pub lambda: f64,
    pub eta: f64,
    /// `1 / (4 sqrt(2) e ||K||^2)`, the open upper end of the `eta` range.
    pub eta_upper: f64,
    pub c_eta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
}

/// Largest admissible `eta` (exclusive).
pub fn eta_upper(k_sup: f64) -> f64 {
    1.0 / (FOUR_SQRT2_E * k_sup * k_sup)
}

/// Half of the admissible range: `1 / (8 sqrt(2) e ||K||^2)`.
pub fn default_eta(k_sup: f64) -> f64 {
    0.5 * eta_upper(k_sup)
}

pub fn theory_constants(k_sup: f64, lambda: f64, eta: Option<f64>) -> Result<TheoryConstants> {
    if !(k_sup.is_finite() && k_sup > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "theory constants need 0 < ||K||_inf < inf, got {k_sup}"
        )));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::DegenerateDiffusion { lambda });
    }
    let upper = eta_upper(k_sup);
    let eta = eta.unwrap_or_else(|| default_eta(k_sup));
    if !(eta > 0.0 && eta < upper) {
        return Err(Error::EtaOutOfRange { eta, upper });
    }
    let k2 = k_sup * k_sup;
    let c_eta = 8.0 * k2 - 2.0 * (1.0 - FOUR_SQRT2_E * k2 * eta).ln();
    let c1 = (4.0 * k2 + LN_2) / (FOUR_SQRT2_E * k2);
    let c2 = 4.0 * FOUR_SQRT2_E * k2 / lambda;
    Ok(TheoryConstants {
        k_sup,
        lambda,
        eta,
        eta_upper: upper,
        c_eta,
        c1,
        c2,
        c: c1.max(c2),
    })
}

/// `C(eta) eta (exp(T / (2 lambda eta)) - 1)` at each `T`.
pub fn theory_bound_curve(consts: &TheoryConstants, lambda: f64, t_values: &[f64]) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::DegenerateDiffusion { lambda });
    }
    t_values
        .iter()
        .map(|&t| {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidParameter(format!("bound curve needs T >= 0, got {t}")));
            }
            let exponent = t / (2.0 * lambda * consts.eta);
            Ok(if exponent > MAX_EXPONENT {
                f64::INFINITY
            } else {
                consts.c_eta * consts.eta * exponent.exp_m1()
            })
        })
        .collect()
}

/// `4 ||K||^2 T N / ((N - 1) lambda)`, the uniform cap on the reversed functional.
pub fn reversed_cap(k_sup: f64, t: f64, n: usize, lambda: f64) -> f64 {
    4.0 * k_sup * k_sup * t * n as f64 / ((n - 1) as f64 * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_constants() {
        let c = theory_constants(1.0, 1.0, None).unwrap();
        assert!((FOUR_SQRT2_E * c.eta - 0.5).abs() < 1e-15);
        assert!((c.c_eta - (8.0 + 2.0 * LN_2)).abs() < 1e-12);
        assert!((c.c_eta - 9.386294).abs() < 1e-6);
        assert!((c.c1 - 0.305207).abs() < 1e-6);
        assert!((c.c2 - 61.508).abs() < 1e-3);
        assert_eq!(c.c, c.c2);
        assert!((c.eta - 0.032516).abs() < 1e-6);
    }

    #[test]
    fn eta_range_enforced_and_singular() {
        let up = eta_upper(1.0);
        assert!(matches!(theory_constants(1.0, 1.0, Some(up)), Err(Error::EtaOutOfRange { .. })));
        assert!(theory_constants(1.0, 1.0, Some(0.0)).is_err());
        assert!(theory_constants(1.0, 1.0, Some(-1.0)).is_err());
        // logarithmic blow-up: C(eta) = 8 + 2 log(1 / gap)
        let mut prev = 0.0;
        for gap in [1e-2, 1e-4, 1e-7, 1e-10, 1e-14] {
            let c = theory_constants(1.0, 1.0, Some(up * (1.0 - gap))).unwrap();
            assert!(c.c_eta > prev);
            assert!((c.c_eta - (8.0 - 2.0 * gap.ln())).abs() < 1e-2 * c.c_eta);
            prev = c.c_eta;
        }
        assert!(prev > 70.0);
        assert!(theory_constants(0.0, 1.0, None).is_err());
        assert!(theory_constants(1.0, 0.0, None).is_err());
    }

    #[test]
    fn bound_curve_values() {
        let c = theory_constants(1.0, 1.0, None).unwrap();
        let ts: Vec<f64> = (0..10).map(|i| 0.05 * i as f64).collect();
        let b = theory_bound_curve(&c, 1.0, &ts).unwrap();
        assert_eq!(b[0], 0.0);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        let at = theory_bound_curve(&c, 1.0, &[0.1]).unwrap()[0];
        let expect = c.c_eta * c.eta * ((0.1 / (2.0 * c.eta)).exp() - 1.0);
        assert!((at - expect).abs() < 1e-12 * expect);
        // regression anchor
        assert!((at - 1.1151777).abs() < 1e-6, "{at}");
        assert_eq!(theory_bound_curve(&c, 1.0, &[100.0]).unwrap()[0], f64::INFINITY);
        assert!(theory_bound_curve(&c, 1.0, &[-1.0]).is_err());
    }
}
