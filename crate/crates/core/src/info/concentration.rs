use serde::Serialize;

use crate::error::{Error, Result};
use crate::girsanov::{eta_upper, FOUR_SQRT2_E};
use crate::model::{ConvolutionMoments, Domain, KernelSpec, RngPolicy};
use crate::sde::ReferenceCloud;
use crate::stats::{map_indexed, MeanSe};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub kernel: String,
    pub t: f64,
    pub n: usize,
    pub eta: f64,
    pub k_sup: f64,
    pub resamples: usize,
    /// Mean of `exp(S)` over the resampled tuples.
    pub moment: MeanSe,
    /// Mean of `S` itself.
    pub statistic: MeanSe,
    /// `1 / (1 - 4 sqrt(2) e ||K||^2 eta)`.
    pub bound: f64,
    pub holds: bool,
}

/// Positions of a cloud snapshot and `K * rho(y)` at each of them.
struct Snapshot {
    d: usize,
    positions: Vec<f64>,
    conv: Vec<f64>,
}

impl Snapshot {
    fn new(cloud: &ReferenceCloud, kernel: &KernelSpec, t: f64) -> Result<Self> {
        let d = cloud.d();
        kernel.check_dim(d)?;
        let step = cloud.grid().step_of(t)?;
        let stride = cloud.coords();
        let snap = cloud.snapshot(step);
        let positions: Vec<f64> = snap.chunks_exact(stride).flat_map(|p| p[..d].to_vec()).collect();
        let moments = ConvolutionMoments::compute(kernel, &positions, d, d);
        let mut conv = vec![0.0; positions.len()];
        for (x, out) in positions.chunks_exact(d).zip(conv.chunks_exact_mut(d)) {
            if !moments.eval_into(x, out) {
                kernel.convolve_direct(x, &positions, d, out);
            }
        }
        Ok(Snapshot { d, positions, conv })
    }

    fn size(&self) -> usize {
        self.positions.len() / self.d
    }

    fn point(&self, idx: usize) -> &[f64] {
        &self.positions[idx * self.d..(idx + 1) * self.d]
    }

    /// `A = K(y_i - y_j) - K * rho(y_i)` into `out`.
    fn centered(&self, kernel: &KernelSpec, i: usize, j: usize, diff: &mut [f64], out: &mut [f64]) {
        for ((df, a), b) in diff.iter_mut().zip(self.point(i)).zip(self.point(j)) {
            *df = a - b;
        }
        kernel.eval_into(diff, out);
        for (o, c) in out.iter_mut().zip(&self.conv[i * self.d..(i + 1) * self.d]) {
            *o -= c;
        }
    }
}

/// Empirical exponential moment of the quadratic statistic
/// `S = (eta/(N-1)) sum_{j1 != j2, both != i} A_{i,j1} . A_{i,j2}` for `N`-tuples
/// drawn i.i.d. with replacement from the cloud snapshot at `t`.
pub fn concentration_suite(
    cloud: &ReferenceCloud,
    kernel: &KernelSpec,
    t: f64,
    n: usize,
    eta: f64,
    resamples: usize,
    policy: &RngPolicy,
) -> Result<ConcentrationReport> {
    if !kernel.is_bounded() {
        return Err(Error::UnboundedKernel(kernel.name()));
    }
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    if resamples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 resamples, got {resamples}")));
    }
    let k_sup = kernel.sup_norm(cloud.d())?;
    let upper = eta_upper(k_sup);
    if !(eta > 0.0 && eta < upper) {
        return Err(Error::EtaOutOfRange { eta, upper });
    }
    let snap = Snapshot::new(cloud, kernel, t)?;
    let (d, m) = (snap.d, snap.size());
    let scale = eta / (n - 1) as f64;

    let stats = map_indexed(resamples, |r| {
        let mut g = policy.gaussian(Domain::Resample, r, 0);
        let i = g.index(m);
        let mut total = vec![0.0; d];
        let mut squares = 0.0;
        let mut diff = vec![0.0; d];
        let mut a = vec![0.0; d];
        for _ in 1..n {
            snap.centered(kernel, i, g.index(m), &mut diff, &mut a);
            for (tc, ac) in total.iter_mut().zip(&a) {
                *tc += ac;
            }
            squares += a.iter().map(|v| v * v).sum::<f64>();
        }
        let s = scale * (total.iter().map(|v| v * v).sum::<f64>() - squares);
        Ok(s)
    })?;

    let moment = MeanSe::from_fn(resamples, |r| stats[r].exp());
    let statistic = MeanSe::of(&stats);
    let bound = 1.0 / (1.0 - FOUR_SQRT2_E * k_sup * k_sup * eta);
    let holds = moment.mean <= bound + 3.0 * moment.se;
    Ok(ConcentrationReport {
        kernel: kernel.name().to_string(),
        t,
        n,
        eta,
        k_sup,
        resamples,
        moment,
        statistic,
        bound,
        holds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MzOutcome {
    pub p: u32,
    pub terms: usize,
    pub samples: usize,
    /// `||sum_k D_k||_p^2`.
    pub lhs: f64,
    /// `(p - 1) sum_k ||D_k||_p^2`.
    pub rhs: f64,
    /// Delta-method standard error of `lhs - rhs`.
    pub se: f64,
    pub holds: bool,
}

/// Monte Carlo Marcinkiewicz–Zygmund check on scalar martingale differences
/// laid out `(sample, term)`.
pub fn mz_inequality_check(increments: &[f64], terms: usize, p: u32) -> Result<MzOutcome> {
    if p == 0 || p % 2 == 1 {
        return Err(Error::OddMomentOrder(p));
    }
    if terms == 0 || increments.len() % terms != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} increments do not split into rows of {terms}",
            increments.len()
        )));
    }
    let samples = increments.len() / terms;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let pi = p as i32;
    let expo = 2.0 / p as f64;
    let rows: Vec<&[f64]> = increments.chunks_exact(terms).collect();
    let sum_pow: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>().powi(pi)).collect();
    let a = MeanSe::of(&sum_pow).mean;
    let b: Vec<f64> = (0..terms)
        .map(|k| MeanSe::from_fn(samples, |s| rows[s][k].powi(pi)).mean)
        .collect();
    let lhs = a.powf(expo);
    let rhs = (p - 1) as f64 * b.iter().map(|v| v.powf(expo)).sum::<f64>();

    // linearize g(a, b) = a^{2/p} - (p-1) sum b_k^{2/p} around the sample means
    let grad = |v: f64| if v > 0.0 { expo * v.powf(expo - 1.0) } else { 0.0 };
    let ga = grad(a);
    let gb: Vec<f64> = b.iter().map(|&v| (p - 1) as f64 * grad(v)).collect();
    let influence: Vec<f64> = rows
        .iter()
        .zip(&sum_pow)
        .map(|(r, sp)| ga * sp - r.iter().zip(&gb).map(|(x, g)| g * x.powi(pi)).sum::<f64>())
        .collect();
    let se = MeanSe::of(&influence).se;
    Ok(MzOutcome {
        p,
        terms,
        samples,
        lhs,
        rhs,
        se,
        holds: lhs <= rhs + 3.0 * se,
    })
}

/// `D_k = A_{i,k} . sum_{j<k} A_{i,j}` for `k = 1..=terms`, where `A_{i,j}` are
/// centered kernel evaluations between i.i.d. draws from the cloud snapshot at `t`.
/// Each `D_k` is bounded by `k ||K||^2`-type constants and conditionally centered.
pub fn mz_increments_from_cloud(
    cloud: &ReferenceCloud,
    kernel: &KernelSpec,
    t: f64,
    terms: usize,
    samples: usize,
    policy: &RngPolicy,
) -> Result<Vec<f64>> {
    if !kernel.is_bounded() {
        return Err(Error::UnboundedKernel(kernel.name()));
    }
    let snap = Snapshot::new(cloud, kernel, t)?;
    let (d, m) = (snap.d, snap.size());
    let rows = map_indexed(samples, |s| {
        let mut g = policy.gaussian(Domain::Resample, s, 1);
        let i = g.index(m);
        let mut diff = vec![0.0; d];
        let mut a = vec![0.0; d];
        let mut partial = vec![0.0; d];
        let mut row = Vec::with_capacity(terms);
        snap.centered(kernel, i, g.index(m), &mut diff, &mut partial);
        for _ in 0..terms {
            snap.centered(kernel, i, g.index(m), &mut diff, &mut a);
            row.push(a.iter().zip(&partial).map(|(x, y)| x * y).sum::<f64>());
            for (pc, ac) in partial.iter_mut().zip(&a) {
                *pc += ac;
            }
        }
        Ok(row)
    })?;
    Ok(rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialLaw, TimeGrid};
    use crate::sde::Order;

    fn gaussian_cloud(m: usize) -> ReferenceCloud {
        let grid = TimeGrid::new(1.0, 1.0).unwrap();
        let s = InitialLaw::isotropic_gaussian(1, 0.0, 1.0).sampler(1).unwrap();
        let pol = RngPolicy::new(4);
        let mut pts = s.sample(&pol, Domain::Fuzz, 0, m);
        pts.extend(s.sample(&pol, Domain::Fuzz, 1, m));
        ReferenceCloud::from_points(Order::First, 1, grid, pts).unwrap()
    }

    #[test]
    fn trivial_cases_give_unit_moment() {
        let cloud = gaussian_cloud(500);
        let pol = RngPolicy::new(1);
        let c = KernelSpec::constant(vec![1.0]).unwrap();
        let r = concentration_suite(&cloud, &c, 1.0, 16, 0.01, 200, &pol).unwrap();
        assert_eq!(r.moment.mean, 1.0);
        assert!(r.holds);
        let z = concentration_suite(&cloud, &KernelSpec::zero(), 1.0, 16, 0.5, 200, &pol).unwrap();
        assert_eq!(z.moment.mean, 1.0);
        assert_eq!(z.bound, 1.0);
        let sine = KernelSpec::sine(1.0, 1.0).unwrap();
        let two = concentration_suite(&cloud, &sine, 0.0, 2, 0.02, 200, &pol).unwrap();
        assert_eq!(two.moment.mean, 1.0);
    }

    #[test]
    fn sine_moment_below_bound() {
        let cloud = gaussian_cloud(2000);
        let sine = KernelSpec::sine(1.0, 1.0).unwrap();
        let eta = 1.0 / (2.0 * FOUR_SQRT2_E);
        let r = concentration_suite(&cloud, &sine, 1.0, 16, eta, 5000, &RngPolicy::new(2)).unwrap();
        assert!((r.bound - 2.0).abs() < 1e-12);
        assert!(r.holds, "{r:?}");
        assert!(r.moment.mean > 0.9 && r.moment.mean < 2.0);
    }

    #[test]
    fn rejects_inadmissible_eta() {
        let cloud = gaussian_cloud(100);
        let sine = KernelSpec::sine(1.0, 1.0).unwrap();
        let pol = RngPolicy::new(1);
        let up = eta_upper(1.0);
        assert!(matches!(
            concentration_suite(&cloud, &sine, 1.0, 4, up, 10, &pol),
            Err(Error::EtaOutOfRange { .. })
        ));
        assert!(concentration_suite(&cloud, &sine, 1.0, 4, -0.1, 10, &pol).is_err());
        assert!(concentration_suite(&cloud, &KernelSpec::Linear { a: 1.0 }, 1.0, 4, 0.01, 10, &pol).is_err());
    }

    #[test]
    fn mz_single_term_and_orthogonal_increments() {
        let pol = RngPolicy::new(3);
        let mut g = pol.gaussian(Domain::Fuzz, 0, 0);
        let single: Vec<f64> = (0..1000).map(|_| g.next_normal_pair().0).collect();
        for p in [2, 4] {
            let o = mz_inequality_check(&single, 1, p).unwrap();
            assert!((o.rhs - (p - 1) as f64 * o.lhs).abs() < 1e-12 * o.rhs);
            assert!(o.holds);
        }
        // independent signs: for p = 2 both sides estimate the same number
        let terms = 6;
        let coins: Vec<f64> = (0..terms * 20_000)
            .map(|_| if g.next_uniform() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let o = mz_inequality_check(&coins, terms, 2).unwrap();
        assert!((o.rhs - terms as f64).abs() < 1e-12);
        assert!((o.lhs - o.rhs).abs() < 4.0 * o.se, "{o:?}");
        assert!(o.holds);
        assert!(matches!(mz_inequality_check(&coins, terms, 3), Err(Error::OddMomentOrder(3))));
        assert!(mz_inequality_check(&coins, 7, 2).is_err());
    }

    #[test]
    fn mz_cloud_increments_are_centered() {
        let cloud = gaussian_cloud(1000);
        let sine = KernelSpec::sine(1.0, 1.0).unwrap();
        let incs = mz_increments_from_cloud(&cloud, &sine, 1.0, 10, 20_000, &RngPolicy::new(9)).unwrap();
        assert_eq!(incs.len(), 200_000);
        for k in 0..10 {
            let m = MeanSe::from_fn(20_000, |s| incs[s * 10 + k]);
            assert!(m.mean.abs() < 4.0 * m.se + 1e-12, "term {k}: {m:?}");
        }
        for p in [2, 4] {
            assert!(mz_inequality_check(&incs, 10, p).unwrap().holds);
        }
    }
}
