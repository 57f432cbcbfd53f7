//! Order-fixed reductions and Monte Carlo summaries.
//!
//! Per-realization values are always collected in realization order and summed
//! over a fixed binary tree, so totals never depend on the thread schedule.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

const LEAF: usize = 8;

/// Sum over a fixed pairwise tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Round-trippable decimal form with 17 significant digits.
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let se = if n > 1 {
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            f64::NAN
        };
        MeanSe { mean, se, n }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> f64) -> Self {
        let v: Vec<f64> = (0..n).map(f).collect();
        Self::of(&v)
    }
}

/// Evaluates `f(0), ..., f(count - 1)` in parallel and returns the results in
/// index order; on failure the lowest failing index wins.
pub fn map_indexed<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..count as u64).into_par_iter().map(&f).collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig17_round_trips() {
        for x in [0.1, -1.0 / 3.0, 6.02e23, 5e-324, 0.0] {
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(sig17(0.5), "5.0000000000000000e-1");
        assert_eq!(sig17(f64::INFINITY), "inf");
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_se_matches_textbook() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn map_indexed_is_schedule_independent() {
        let f = |i: u64| -> Result<f64> { Ok((i as f64).sqrt().sin()) };
        let a = map_indexed(10_000, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| map_indexed(10_000, f)).unwrap();
        assert_eq!(pairwise_sum(&a).to_bits(), pairwise_sum(&b).to_bits());
        let err = map_indexed(100, |i| {
            if i % 7 == 3 {
                Err(crate::Error::TooFewParticles(i as usize))
            } else {
                Ok(i)
            }
        });
        assert!(matches!(err, Err(crate::Error::TooFewParticles(3))));
    }
}
