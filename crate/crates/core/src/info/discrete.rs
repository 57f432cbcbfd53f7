use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Domain, GaussianStream, RngPolicy};

const NORM_TOL: f64 = 1e-12;

/// Finite probability measure on labelled atoms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(String, f64)>) -> Result<Self> {
        let (labels, probs): (Vec<String>, Vec<f64>) = atoms.into_iter().unzip();
        if labels.is_empty() {
            return Err(Error::InvalidParameter("measure needs at least one atom".into()));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(Error::InvalidParameter("duplicate atom labels".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { labels, probs })
    }

    /// Atoms labelled `"0"`, `"1"`, ... in order.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().enumerate().map(|(i, &p)| (i.to_string(), p)).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: &str) -> f64 {
        self.labels
            .iter()
            .position(|l| l == label)
            .map_or(0.0, |i| self.probs[i])
    }

    /// Both measures on the union of their labels, in first-seen order.
    fn aligned(&self, other: &DiscreteMeasure) -> (Vec<f64>, Vec<f64>) {
        let mut labels: Vec<&String> = self.labels.iter().collect();
        for l in &other.labels {
            if !self.labels.contains(l) {
                labels.push(l);
            }
        }
        labels.iter().map(|l| (self.prob(l), other.prob(l))).unzip()
    }
}

/// The three f-divergences of interest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FDivergence {
    /// `f(x) = x log x`
    Kl,
    /// `f(x) = |x - 1| / 2`
    Tv,
    /// `f(x) = (x - 1)^2`
    Chi2,
}

impl FDivergence {
    pub const ALL: [FDivergence; 3] = [FDivergence::Kl, FDivergence::Tv, FDivergence::Chi2];
}

/// `sum_y Q(y) f(P(y)/Q(y))` with `0 f(0/0) = 0`. Mass of `P` outside the
/// support of `Q` yields `+inf` for KL and chi-square.
pub fn f_divergence(p: &DiscreteMeasure, q: &DiscreteMeasure, f: FDivergence) -> f64 {
    let (ps, qs) = p.aligned(q);
    divergence_of(&ps, &qs, f)
}

pub(crate) fn divergence_of(ps: &[f64], qs: &[f64], f: FDivergence) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in ps.iter().zip(qs) {
        total += match f {
            FDivergence::Tv => 0.5 * (pi - qi).abs(),
            _ if pi == 0.0 && qi == 0.0 => 0.0,
            _ if qi == 0.0 => return f64::INFINITY,
            FDivergence::Kl if pi == 0.0 => 0.0,
            FDivergence::Kl => pi * (pi / qi).ln(),
            FDivergence::Chi2 => (pi - qi) * (pi - qi) / qi,
        };
    }
    // KL of normalized vectors is nonnegative; clamp round-off
    total.max(0.0)
}

/// Row-stochastic transition matrix `P(y | x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Channel {
    inputs: Vec<String>,
    outputs: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Channel {
    pub fn new(inputs: Vec<String>, outputs: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != inputs.len() || rows.iter().any(|r| r.len() != outputs.len()) {
            return Err(Error::ShapeMismatch(format!(
                "channel needs {} rows of {} entries",
                inputs.len(),
                outputs.len()
            )));
        }
        for r in &rows {
            if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParameter("channel entries must be nonnegative".into()));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidParameter(format!("channel row sums to {s}")));
            }
        }
        Ok(Channel { inputs, outputs, rows })
    }

    /// Square matrix on labels `"0".."n-1"`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_in = rows.len();
        let n_out = rows.first().map_or(0, Vec::len);
        Self::new(
            (0..n_in).map(|i| i.to_string()).collect(),
            (0..n_out).map(|i| i.to_string()).collect(),
            rows,
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect())
            .expect("identity is stochastic")
    }

    /// Law of the output when the input has law `p`.
    pub fn push(&self, p: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        for l in p.labels() {
            if p.prob(l) > 0.0 && !self.inputs.contains(l) {
                return Err(Error::ShapeMismatch(format!("channel has no input {l}")));
            }
        }
        let mut out = vec![0.0; self.outputs.len()];
        for (x, row) in self.inputs.iter().zip(&self.rows) {
            let px = p.prob(x);
            for (o, w) in out.iter_mut().zip(row) {
                *o += px * w;
            }
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= total);
        DiscreteMeasure::new(self.outputs.iter().cloned().zip(out).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Slack allowed in the deterministic inequality checks.
pub const INEQ_TOL: f64 = 1e-10;

/// `D_f(P_Y || Q_Y) <= D_f(P_X || Q_X)`: `lhs` is the output divergence, `rhs` the input one.
pub fn dpi_check(p: &DiscreteMeasure, q: &DiscreteMeasure, ch: &Channel, f: FDivergence) -> Result<InequalityOutcome> {
    let input = f_divergence(p, q, f);
    let output = f_divergence(&ch.push(p)?, &ch.push(q)?, f);
    Ok(InequalityOutcome {
        lhs: output,
        rhs: input,
        holds: output <= input + INEQ_TOL || input == f64::INFINITY,
    })
}

/// `int F d rho <= (1/eta) (KL(rho || rho~) + log int exp(eta F) d rho~)`.
pub fn fenchel_young_check(
    rho: &DiscreteMeasure,
    rho_tilde: &DiscreteMeasure,
    f: impl Fn(&str) -> f64,
    eta: f64,
) -> Result<InequalityOutcome> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if rho
        .labels()
        .iter()
        .any(|l| rho.prob(l) > 0.0 && rho_tilde.prob(l) == 0.0)
    {
        return Err(Error::SupportViolation);
    }
    let lhs: f64 = rho.labels().iter().map(|l| rho.prob(l) * f(l)).sum();
    let ef: Vec<(f64, f64)> = rho_tilde
        .labels()
        .iter()
        .map(|l| (rho_tilde.prob(l), eta * f(l)))
        .filter(|(w, _)| *w > 0.0)
        .collect();
    let top = ef.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let log_mgf = top + ef.iter().map(|(w, v)| w * (v - top).exp()).sum::<f64>().ln();
    let rhs = (f_divergence(rho, rho_tilde, FDivergence::Kl) + log_mgf) / eta;
    Ok(InequalityOutcome {
        lhs,
        rhs,
        holds: lhs <= rhs + INEQ_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FuzzSummary {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` seen.
    pub max_excess: f64,
}

impl FuzzSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, o: &InequalityOutcome) {
        self.cases += 1;
        if !o.holds {
            self.violations += 1;
        }
        let excess = o.lhs - o.rhs;
        if excess.is_finite() {
            self.max_excess = self.max_excess.max(excess);
        }
    }

    fn named(name: String) -> Self {
        FuzzSummary {
            name,
            cases: 0,
            violations: 0,
            max_excess: f64::NEG_INFINITY,
        }
    }
}

/// Random probability vector; roughly one entry in five is zeroed when `sparse`.
fn random_simplex(g: &mut GaussianStream, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let e = -(1.0 - g.next_uniform()).ln();
            if sparse && g.next_uniform() < 0.2 {
                0.0
            } else {
                e
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Data-processing fuzz: random `P`, `Q` on `states` atoms pushed through a
/// random `states x states` channel, for every divergence.
pub fn dpi_fuzz(cases: usize, states: usize, policy: &RngPolicy) -> Result<Vec<FuzzSummary>> {
    let mut out: Vec<FuzzSummary> = FDivergence::ALL
        .iter()
        .map(|f| FuzzSummary::named(format!("dpi_{f:?}").to_lowercase()))
        .collect();
    for case in 0..cases as u64 {
        let mut g = policy.gaussian(Domain::Fuzz, case, 0);
        let p = DiscreteMeasure::from_probs(&random_simplex(&mut g, states, true))?;
        let q = DiscreteMeasure::from_probs(&random_simplex(&mut g, states, false))?;
        let rows = (0..states).map(|_| random_simplex(&mut g, states, true)).collect();
        let ch = Channel::from_rows(rows)?;
        for (f, summary) in FDivergence::ALL.iter().zip(out.iter_mut()) {
            summary.record(&dpi_check(&p, &q, &ch, *f)?);
        }
    }
    Ok(out)
}

/// Fenchel–Young fuzz on `states`-point spaces with random `F` and `eta`.
pub fn fenchel_young_fuzz(cases: usize, states: usize, policy: &RngPolicy) -> Result<FuzzSummary> {
    let mut summary = FuzzSummary::named("fenchel_young".into());
    for case in 0..cases as u64 {
        let mut g = policy.gaussian(Domain::Fuzz, case, 1);
        let rho = DiscreteMeasure::from_probs(&random_simplex(&mut g, states, true))?;
        let rho_t = DiscreteMeasure::from_probs(&random_simplex(&mut g, states, false))?;
        let values: Vec<f64> = (0..states).map(|_| 4.0 * g.next_normal_pair().0).collect();
        let eta = (3.0 * (2.0 * g.next_uniform() - 1.0)).exp();
        let o = fenchel_young_check(&rho, &rho_t, |l| values[l.parse::<usize>().unwrap()], eta)?;
        summary.record(&o);
    }
    Ok(summary)
}

/// KL nonnegativity with equality exactly at `P = Q`.
pub fn kl_nonnegativity_fuzz(cases: usize, states: usize, policy: &RngPolicy) -> Result<FuzzSummary> {
    let mut summary = FuzzSummary::named("kl_nonnegative".into());
    for case in 0..cases as u64 {
        let mut g = policy.gaussian(Domain::Fuzz, case, 2);
        let p = DiscreteMeasure::from_probs(&random_simplex(&mut g, states, true))?;
        let q = DiscreteMeasure::from_probs(&random_simplex(&mut g, states, false))?;
        let kl = f_divergence(&p, &q, FDivergence::Kl);
        let self_kl = f_divergence(&p, &p, FDivergence::Kl);
        let ok = kl >= 0.0 && kl > 1e-10 && self_kl.abs() <= 1e-10;
        summary.record(&InequalityOutcome {
            lhs: -kl,
            rhs: 0.0,
            holds: ok,
        });
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(p: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::from_probs(p).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let p = m(&[0.2, 0.3, 0.5]);
        for f in FDivergence::ALL {
            assert_eq!(f_divergence(&p, &p, f), 0.0);
        }
        let kl = f_divergence(&m(&[1.0, 0.0]), &m(&[0.5, 0.5]), FDivergence::Kl);
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-15);
        let tv = f_divergence(&m(&[0.75, 0.25]), &m(&[0.25, 0.75]), FDivergence::Tv);
        assert!((tv - 0.5).abs() < 1e-15);
        assert_eq!(f_divergence(&m(&[0.5, 0.5]), &m(&[1.0, 0.0]), FDivergence::Kl), f64::INFINITY);
        assert_eq!(f_divergence(&m(&[0.5, 0.5]), &m(&[1.0, 0.0]), FDivergence::Chi2), f64::INFINITY);
        assert!((f_divergence(&m(&[0.5, 0.5]), &m(&[1.0, 0.0]), FDivergence::Tv) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::from_probs(&[0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::from_probs(&[-0.1, 1.1]).is_err());
        assert!(DiscreteMeasure::new(vec![("a".into(), 0.5), ("a".into(), 0.5)]).is_err());
        assert!(Channel::from_rows(vec![vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
        assert!(Channel::from_rows(vec![vec![1.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn dpi_special_channels() {
        let p = m(&[0.1, 0.6, 0.3]);
        let q = m(&[0.3, 0.3, 0.4]);
        for f in FDivergence::ALL {
            let id = dpi_check(&p, &q, &Channel::identity(3), f).unwrap();
            assert!((id.lhs - id.rhs).abs() < 1e-15 && id.holds);
            let collapse = Channel::from_rows(vec![vec![1.0]; 3]).unwrap();
            let c = dpi_check(&p, &q, &collapse, f).unwrap();
            assert_eq!(c.lhs, 0.0);
            assert!(c.holds);
        }
        let bad = DiscreteMeasure::new(vec![("z".into(), 1.0)]).unwrap();
        assert!(dpi_check(&bad, &q, &Channel::identity(3), FDivergence::Kl).is_err());
    }

    #[test]
    fn fenchel_young_examples() {
        let rho = m(&[0.25, 0.25, 0.5]);
        let o = fenchel_young_check(&rho, &rho, |_| 1.7, 0.3).unwrap();
        assert!((o.lhs - 1.7).abs() < 1e-14 && (o.rhs - 1.7).abs() < 1e-14 && o.holds);
        let f = |l: &str| [0.0, 1.0, -2.0][l.parse::<usize>().unwrap()];
        let o = fenchel_young_check(&rho, &rho, f, 1.0).unwrap();
        let mgf: f64 = 0.25 + 0.25 * 1f64.exp() + 0.5 * (-2f64).exp();
        assert!((o.rhs - o.lhs - (mgf.ln() - (0.25 - 1.0))).abs() < 1e-14);
        assert!(o.rhs > o.lhs);
        let off = m(&[0.0, 0.0, 1.0]);
        assert!(matches!(fenchel_young_check(&rho, &off, f, 1.0), Err(Error::SupportViolation)));
    }

    #[test]
    fn fuzz_suites_hold() {
        let pol = RngPolicy::new(2);
        for s in dpi_fuzz(1000, 4, &pol).unwrap() {
            assert!(s.passed(), "{s:?}");
            assert_eq!(s.cases, 1000);
        }
        let fy = fenchel_young_fuzz(1000, 5, &pol).unwrap();
        assert!(fy.passed(), "{fy:?}");
        let kl = kl_nonnegativity_fuzz(1000, 4, &pol).unwrap();
        assert!(kl.passed(), "{kl:?}");
    }
}
