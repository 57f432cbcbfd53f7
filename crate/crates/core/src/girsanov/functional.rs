use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sde::{pairwise_field, CloudDrift, ReferenceCloud, Scenario, StepObserver};
use crate::stats::{map_indexed, MeanSe};

use super::mismatch::{rn_term, weigh};

/// Which path law the realizations are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLaw {
    Interacting,
    MeanField,
}

/// Monte Carlo estimate of a time-integrated drift-mismatch functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalEstimate {
    pub variant: String,
    pub value: f64,
    pub std_error: f64,
    pub dt: f64,
    /// Across-realization mean of the integrand at `t_0, ..., t_{n-1}`.
    pub integrand_mean: Vec<f64>,
    pub integrand_se: Vec<f64>,
    /// `dt * sum_{k < n} integrand_mean[k]`, length `n_steps + 1`.
    pub cumulative: Vec<f64>,
    /// Standard error of the per-realization cumulative sums.
    pub cumulative_se: Vec<f64>,
    pub n_realizations: usize,
    pub config_hash: String,
}

impl FunctionalEstimate {
    fn from_series(variant: &str, series: &[Vec<f64>], dt: f64, config_hash: &str) -> Self {
        let r = series.len();
        let steps = series.first().map_or(0, Vec::len);
        let mut integrand_mean = Vec::with_capacity(steps);
        let mut integrand_se = Vec::with_capacity(steps);
        let mut cumulative = Vec::with_capacity(steps + 1);
        let mut cumulative_se = Vec::with_capacity(steps + 1);
        cumulative.push(0.0);
        cumulative_se.push(0.0);
        let mut running = vec![0.0; r];
        let mut column = vec![0.0; r];
        let mut total = 0.0;
        for k in 0..steps {
            for (c, s) in column.iter_mut().zip(series) {
                *c = s[k];
            }
            let m = MeanSe::of(&column);
            integrand_mean.push(m.mean);
            integrand_se.push(m.se);
            total += m.mean;
            cumulative.push(dt * total);
            for (acc, s) in running.iter_mut().zip(series) {
                *acc += dt * s[k];
            }
            cumulative_se.push(MeanSe::of(&running).se);
        }
        FunctionalEstimate {
            variant: variant.to_string(),
            value: *cumulative.last().unwrap(),
            std_error: *cumulative_se.last().unwrap(),
            dt,
            integrand_mean,
            integrand_se,
            cumulative,
            cumulative_se,
            n_realizations: r,
            config_hash: config_hash.to_string(),
        }
    }

    /// Cumulative value and standard error at the grid point nearest `t`.
    pub fn value_at(&self, t: f64) -> Result<(f64, f64)> {
        let horizon = self.dt * self.integrand_mean.len() as f64;
        if !(0.0..=horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        let k = ((t / self.dt).round() as usize).min(self.integrand_mean.len());
        Ok((self.cumulative[k], self.cumulative_se[k]))
    }

    /// Relative gap between `value` and `dt * sum(integrand_mean)`.
    pub fn decomposition_error(&self) -> f64 {
        let direct = self.dt * crate::stats::pairwise_sum(&self.integrand_mean);
        let scale = self.value.abs().max(f64::MIN_POSITIVE);
        (self.value - direct).abs() / scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathFunctionals {
    pub law: PathLaw,
    /// `(1/(2 lambda)) sum_i int E|b_i|^2`.
    pub lambda_weighted: FunctionalEstimate,
    /// `(1/2) sum_i int E|bb_i|^2`.
    pub sharp: FunctionalEstimate,
    /// Mean of `exp(log dQ^2/dQ^1)` over interacting paths.
    pub martingale: Option<MeanSe>,
    pub lambda: f64,
    pub n: usize,
    pub horizon: f64,
}

struct Tally<'a> {
    law: PathLaw,
    kernel: &'a crate::model::KernelSpec,
    table: &'a CloudDrift<'a>,
    weight: &'a DMatrix<f64>,
    inv_two_lambda: f64,
    n: usize,
    d: usize,
    dp: usize,
    dt: f64,
    other: Vec<f64>,
    b: Vec<f64>,
    bb: Vec<f64>,
    lam: Vec<f64>,
    sharp: Vec<f64>,
    log_rn: f64,
}

impl StepObserver for Tally<'_> {
    fn observe(&mut self, step: usize, x: &[f64], _v: Option<&[f64]>, field: &[f64], dw: Option<&[f64]>) -> Result<()> {
        let (n, d, dp) = (self.n, self.d, self.dp);
        match self.law {
            PathLaw::Interacting => {
                for p in 0..n {
                    self.table
                        .eval_into(step, &x[p * d..(p + 1) * d], &mut self.other[p * d..(p + 1) * d]);
                }
            }
            PathLaw::MeanField => pairwise_field(self.kernel, x, n, d, &mut self.other),
        }
        let (pair, conv) = match self.law {
            PathLaw::Interacting => (field, &self.other[..]),
            PathLaw::MeanField => (&self.other[..], field),
        };
        let mut lam = 0.0;
        let mut sharp = 0.0;
        for p in 0..n {
            for c in 0..d {
                self.b[c] = pair[p * d + c] - conv[p * d + c];
                lam += self.b[c] * self.b[c];
            }
            weigh(self.weight, &self.b, &mut self.bb);
            sharp += self.bb.iter().map(|v| v * v).sum::<f64>();
            if let (PathLaw::Interacting, Some(dw)) = (self.law, dw) {
                self.log_rn += rn_term(&self.bb, &dw[p * dp..(p + 1) * dp], self.dt);
            }
        }
        self.lam.push(lam * self.inv_two_lambda);
        self.sharp.push(0.5 * sharp);
        Ok(())
    }
}

struct Realization {
    lam: Vec<f64>,
    sharp: Vec<f64>,
    log_rn: f64,
}

/// SHA-256 over a canonical JSON description of the scenario and extra settings.
pub fn scenario_hash(scn: &Scenario, extra: &serde_json::Value) -> String {
    let doc = serde_json::json!({
        "order": scn.order,
        "params": scn.params,
        "kernel": scn.kernel,
        "init": scn.init,
        "grid": scn.grid,
        "n": scn.n,
        "master_seed": scn.policy.master_seed,
        "drift": format!("{:?}", scn.drift),
        "extra": extra,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Both drift-mismatch functionals along `r` realizations of the chosen path law.
/// Accepts the unbounded linear kernel (with a warning) for oracle comparisons.
pub fn path_functionals(
    scn: &Scenario,
    cloud: Option<&ReferenceCloud>,
    law: PathLaw,
    r: usize,
) -> Result<PathFunctionals> {
    if r < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 realizations, got {r}")));
    }
    if !scn.kernel.is_bounded() {
        log::warn!("kernel {} is unbounded: functional computed for oracle comparison only", scn.kernel.name());
    }
    let lambda = scn.params.nondegenerate_lambda()?;
    let weight = scn.params.girsanov_weight()?;
    let table = scn.cloud_drift(cloud)?;
    let started = Instant::now();
    let hash = scenario_hash(
        scn,
        &serde_json::json!({ "law": law, "realizations": r, "cloud": cloud.map(|c| c.provenance()) }),
    );
    let (n, d, dp) = (scn.n, scn.params.d, scn.params.d_prime);
    let steps = scn.grid.n_steps();

    let runs = map_indexed(r, |realization| {
        let mut tally = Tally {
            law,
            kernel: &scn.kernel,
            table: &table,
            weight,
            inv_two_lambda: 0.5 / lambda,
            n,
            d,
            dp,
            dt: scn.grid.dt(),
            other: vec![0.0; n * d],
            b: vec![0.0; d],
            bb: vec![0.0; dp],
            lam: Vec::with_capacity(steps),
            sharp: Vec::with_capacity(steps),
            log_rn: 0.0,
        };
        match law {
            PathLaw::Interacting => scn.run_interacting(realization, Some(&mut tally))?,
            PathLaw::MeanField => scn.run_meanfield(&table, realization, Some(&mut tally))?,
        };
        Ok(Realization {
            lam: tally.lam,
            sharp: tally.sharp,
            log_rn: tally.log_rn,
        })
    })?;

    let dt = scn.grid.dt();
    let (lam, sharp): (Vec<_>, Vec<_>) = runs.iter().map(|x| (x.lam.clone(), x.sharp.clone())).unzip();
    let martingale = (law == PathLaw::Interacting)
        .then(|| MeanSe::from_fn(runs.len(), |i| runs[i].log_rn.exp()));
    log::info!(
        "{law:?} functionals: N={n}, R={r}, {steps} steps in {:.2?}",
        started.elapsed()
    );
    Ok(PathFunctionals {
        law,
        lambda_weighted: FunctionalEstimate::from_series("lambda_weighted", &lam, dt, &hash),
        sharp: FunctionalEstimate::from_series("sharp", &sharp, dt, &hash),
        martingale,
        lambda,
        n,
        horizon: scn.grid.horizon(),
    })
}

fn require_bounded(scn: &Scenario) -> Result<()> {
    if scn.kernel.is_bounded() {
        Ok(())
    } else {
        Err(Error::UnboundedKernel(scn.kernel.name()))
    }
}

/// Forward path-space KL bound along interacting paths, with the discrete
/// Girsanov martingale check.
pub fn forward_kl_bound(scn: &Scenario, cloud: Option<&ReferenceCloud>, r: usize) -> Result<PathFunctionals> {
    require_bounded(scn)?;
    path_functionals(scn, cloud, PathLaw::Interacting, r)
}

/// Reversed functional: the same integrand along mean-field-driven (i.i.d.) paths.
pub fn reversed_kl_functional(scn: &Scenario, cloud: Option<&ReferenceCloud>, r: usize) -> Result<PathFunctionals> {
    require_bounded(scn)?;
    path_functionals(scn, cloud, PathLaw::MeanField, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialLaw, KernelSpec, RngPolicy, SystemParams, TimeGrid};
    use crate::sde::{build_reference_cloud, simulate_interacting, ExternalDrift, Order};

    fn scenario(kernel: KernelSpec, n: usize, t: f64) -> Scenario {
        Scenario::new(
            Order::First,
            SystemParams::isotropic(1, 1.0, 1.0, 0.0).unwrap(),
            kernel,
            InitialLaw::isotropic_gaussian(1, 0.0, 1.0),
            TimeGrid::new(t, 0.01).unwrap(),
            n,
            RngPolicy::new(31),
        )
        .unwrap()
    }

    #[test]
    fn trivial_kernels_give_exact_zero() {
        for k in [KernelSpec::zero(), KernelSpec::constant(vec![1.0]).unwrap()] {
            let scn = scenario(k, 4, 0.5);
            for law in [PathLaw::Interacting, PathLaw::MeanField] {
                let f = path_functionals(&scn, None, law, 8).unwrap();
                assert_eq!(f.lambda_weighted.value, 0.0);
                assert_eq!(f.sharp.value, 0.0);
            }
            let f = forward_kl_bound(&scn, None, 4).unwrap();
            assert_eq!(f.martingale.unwrap().mean, 1.0);
        }
    }

    #[test]
    fn streaming_matches_stored_path_computation() {
        let k = KernelSpec::sine(1.0, 1.0).unwrap();
        let scn = scenario(k.clone(), 5, 0.3);
        let cloud = build_reference_cloud(
            Order::First,
            &scn.params,
            &k,
            &scn.init,
            &scn.grid,
            500,
            &scn.policy,
            0,
            &ExternalDrift::None,
        )
        .unwrap();
        let f = path_functionals(&scn, Some(&cloud), PathLaw::Interacting, 3).unwrap();
        let mut log_rn = Vec::new();
        let mut lam_total = 0.0;
        for r in 0..3 {
            let b = simulate_interacting(&scn, r).unwrap();
            let mm = super::super::drift_mismatch(&b, Some(&cloud), &k, &scn.params).unwrap();
            log_rn.push(super::super::log_rn_derivative(&mm, &b, &scn.params).unwrap());
            for s in 0..scn.grid.n_steps() {
                for p in 0..5 {
                    lam_total += 0.5 * mm.raw_at(s, p)[0].powi(2) * scn.grid.dt();
                }
            }
        }
        let mean_exp = log_rn.iter().map(|v| v.exp()).sum::<f64>() / 3.0;
        assert!((f.martingale.unwrap().mean - mean_exp).abs() < 1e-12);
        assert!((f.lambda_weighted.value - lam_total / 3.0).abs() < 1e-12);
        assert!(f.lambda_weighted.decomposition_error() < 1e-12);
        assert!(f.sharp.value <= f.lambda_weighted.value * (1.0 + 1e-12));
        assert!(f.lambda_weighted.value > 0.0);
        assert_eq!(f.lambda_weighted.cumulative.len(), scn.grid.n_steps() + 1);
    }

    #[test]
    fn linear_kernel_is_refused_by_bound_ops() {
        let scn = scenario(KernelSpec::Linear { a: 0.5 }, 3, 0.1);
        assert!(matches!(forward_kl_bound(&scn, None, 4), Err(Error::UnboundedKernel(_))));
        assert!(matches!(reversed_kl_functional(&scn, None, 4), Err(Error::UnboundedKernel(_))));
    }

    #[test]
    fn hash_tracks_configuration() {
        let a = scenario(KernelSpec::zero(), 4, 0.5);
        let b = scenario(KernelSpec::zero(), 5, 0.5);
        let x = serde_json::json!({});
        assert_eq!(scenario_hash(&a, &x), scenario_hash(&a.clone(), &x));
        assert_ne!(scenario_hash(&a, &x), scenario_hash(&b, &x));
        assert_eq!(scenario_hash(&a, &x).len(), 64);
    }
}
