use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::girsanov::{
    forward_kl_bound, reversed_cap, reversed_kl_functional, theory_bound_curve, theory_constants, FunctionalEstimate,
    PathFunctionals, TheoryConstants,
};
use crate::model::KernelSpec;
use crate::sde::{build_reference_cloud, ExternalDrift, ReferenceCloud, Scenario};
use crate::stats::map_indexed;

use super::config::{ExperimentConfig, ScenarioKind, SweepSection, PRESET_NOTE};
use super::report::{CheckRecord, RunReport, Table};
use super::suites;

/// Reports of a sweep plus the table keyed by the swept variables.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// One report per grid point, followed by the report holding the cross-point checks.
    pub reports: Vec<RunReport>,
    pub aggregate: Table,
}

pub(crate) fn blank_report(config: &ExperimentConfig, point: BTreeMap<String, f64>) -> RunReport {
    RunReport {
        scenario: config.scenario.name().to_string(),
        description: config.description.clone(),
        note: PRESET_NOTE.to_string(),
        config_hash: config.hash(),
        seed: config.montecarlo.master_seed,
        point,
        records: Vec::new(),
        tables: Vec::new(),
        budget_seconds: config.scenario.budget_seconds(),
        wall_clock_seconds: 0.0,
    }
}

fn finish(mut report: RunReport, started: Instant) -> RunReport {
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    if report.wall_clock_seconds > report.budget_seconds {
        log::warn!(
            "{} took {:.1} s, over its {:.0} s budget",
            report.scenario,
            report.wall_clock_seconds,
            report.budget_seconds
        );
    }
    report
}

fn is_functional_kind(kind: ScenarioKind) -> bool {
    matches!(
        kind,
        ScenarioKind::BoundDominance | ScenarioKind::MassIndependence | ScenarioKind::ReversedLinearity
    )
}

/// Runs one configuration at its base point (sweep lists other than the
/// oracle's evaluation times are ignored).
pub fn run_scenario(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    log::info!("running {} ({})", config.scenario.name(), config.hash());
    let mut report = blank_report(config, BTreeMap::new());
    match config.scenario {
        ScenarioKind::Simulate => suites::simulate(config, &mut report)?,
        ScenarioKind::ZeroKernelNull => suites::zero_kernel_null(config, &mut report)?,
        ScenarioKind::DpiSuite => suites::dpi_suite(config, &mut report)?,
        ScenarioKind::KnnSanity => suites::knn_sanity(config, &mut report)?,
        ScenarioKind::OracleValidation => suites::oracle_validation(config, &mut report)?,
        ScenarioKind::Martingale => suites::martingale(config, &mut report)?,
        ScenarioKind::Concentration => suites::concentration(config, &mut report)?,
        ScenarioKind::BoundDominance | ScenarioKind::MassIndependence | ScenarioKind::ReversedLinearity => {
            let grid = SweepSection {
                n: vec![config.system.n],
                mass: vec![config.system.mass],
                t: vec![config.integration.t],
                eta: Vec::new(),
            };
            let (mut points, _) = functional_sweep(config, &grid)?;
            let point = points.remove(0);
            report.records = point.records;
            report.tables = point.tables;
        }
    }
    Ok(finish(report, started))
}

/// One report per point of the sweep grid plus an aggregate report.
///
/// Functional scenarios simulate once per `(mass, N)` at the largest `T` and
/// read smaller horizons off the cumulative sums; the reference cloud is shared
/// across `N` when its size does not depend on `N`. Other scenarios rerun
/// [`run_scenario`] at every point.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    if config.sweep.is_empty() {
        return Err(Error::Config("run_sweep needs at least one nonempty sweep list".into()));
    }
    let started = Instant::now();
    let (mut reports, aggregate, checks) = if is_functional_kind(config.scenario) {
        let (points, aggregate) = functional_sweep(config, &config.sweep)?;
        let checks = aggregate_checks(config, &aggregate);
        (points, aggregate, checks)
    } else {
        generic_sweep(config)?
    };
    let mut summary = blank_report(config, BTreeMap::new());
    summary.scenario = format!("{}-aggregate", config.scenario.name());
    summary.records = checks;
    summary.records.push(CheckRecord::new(
        "sweep points",
        "every grid point produced a report",
        reports.len() as f64,
        !reports.is_empty(),
    ));
    summary.tables.push(aggregate.clone());
    reports.push(finish(summary, started));
    Ok(SweepOutcome { reports, aggregate })
}

fn or_base<T: Copy>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

fn generic_sweep(config: &ExperimentConfig) -> Result<(Vec<RunReport>, Table, Vec<CheckRecord>)> {
    let mut aggregate = Table::new("aggregate", &["n", "mass", "t", "eta", "checks", "failures"]);
    let mut reports = Vec::new();
    let eta: Vec<Option<f64>> = if config.sweep.eta.is_empty() {
        vec![config.theory.eta]
    } else {
        config.sweep.eta.iter().map(|&e| Some(e)).collect()
    };
    for &mass in &or_base(&config.sweep.mass, config.system.mass) {
        for &n in &or_base(&config.sweep.n, config.system.n) {
            for &t in &or_base(&config.sweep.t, config.integration.t) {
                for &e in &eta {
                    let mut c = config.clone();
                    c.system.mass = mass;
                    c.system.n = n;
                    c.integration.t = t;
                    c.theory.eta = e;
                    c.sweep = SweepSection::default();
                    let mut r = run_scenario(&c)?;
                    r.config_hash = config.hash();
                    r.point = BTreeMap::from([
                        ("n".to_string(), n as f64),
                        ("mass".to_string(), mass),
                        ("t".to_string(), t),
                    ]);
                    if let Some(e) = e {
                        r.point.insert("eta".into(), e);
                    }
                    aggregate.rows.push(vec![
                        n as f64,
                        mass,
                        t,
                        e.unwrap_or(f64::NAN),
                        r.records.len() as f64,
                        r.failures().count() as f64,
                    ]);
                    reports.push(r);
                }
            }
        }
    }
    Ok((reports, aggregate, Vec::new()))
}

pub(crate) fn needs_cloud(kernel: &KernelSpec) -> bool {
    !matches!(kernel, KernelSpec::Zero | KernelSpec::Constant { .. })
}

/// Reference cloud for the configuration at the given mass and horizon, or
/// `None` for kernels whose convolution does not depend on the law.
pub(crate) fn cloud_for(config: &ExperimentConfig, scn: &Scenario, n: usize) -> Result<Option<ReferenceCloud>> {
    if !needs_cloud(&scn.kernel) {
        return Ok(None);
    }
    build_reference_cloud(
        scn.order,
        &scn.params,
        &scn.kernel,
        &scn.init,
        &scn.grid,
        config.cloud_size(n),
        &scn.policy,
        config.meanfield.refine_iters,
        &ExternalDrift::None,
    )
    .map(Some)
}

/// Theory constants, or `None` for the zero kernel where the curve is identically 0.
pub(crate) fn constants_for(config: &ExperimentConfig, eta: Option<f64>) -> Result<Option<TheoryConstants>> {
    let params = config.params()?;
    let k_sup = config.kernel.sup_norm(params.d)?;
    if k_sup == 0.0 {
        return Ok(None);
    }
    theory_constants(k_sup, params.nondegenerate_lambda()?, eta).map(Some)
}

pub(crate) fn curve_at(consts: Option<&TheoryConstants>, ts: &[f64]) -> Result<Vec<f64>> {
    match consts {
        Some(c) => theory_bound_curve(c, c.lambda, ts),
        None => Ok(vec![0.0; ts.len()]),
    }
}

/// `(t, integrand, cumulative lambda-weighted, cumulative sharp, theory curve)`
/// on the grid up to `t`; the integrand column holds the left-endpoint value of
/// the step that ends at `t`.
pub(crate) fn curve_table(
    name: &str,
    f: &PathFunctionals,
    t: f64,
    consts: Option<&TheoryConstants>,
) -> Result<Table> {
    let lam = &f.lambda_weighted;
    let steps = ((t / lam.dt).round() as usize).min(lam.integrand_mean.len());
    let times: Vec<f64> = (1..=steps).map(|k| k as f64 * lam.dt).collect();
    let curve = curve_at(consts, &times)?;
    let mut table = Table::new(
        name,
        &["t", "integrand_mean", "integrand_se", "cum_bound_lambda", "cum_bound_sharp", "theory_curve"],
    );
    for k in 1..=steps {
        table.rows.push(vec![
            times[k - 1],
            lam.integrand_mean[k - 1],
            lam.integrand_se[k - 1],
            lam.cumulative[k],
            f.sharp.cumulative[k],
            curve[k - 1],
        ]);
    }
    Ok(table)
}

fn below_curve(label: &str, est: &FunctionalEstimate, t: f64, curve: f64) -> Result<CheckRecord> {
    let (v, se) = est.value_at(t)?;
    Ok(CheckRecord::new(
        format!("{label} at T={t}"),
        "functional <= C(eta) eta (exp(T/(2 lambda eta)) - 1)",
        v,
        v <= curve,
    )
    .with_se(se)
    .with_bound(curve))
}

fn sharp_below_lambda(label: &str, f: &PathFunctionals, t: f64) -> Result<CheckRecord> {
    let (sharp, se) = f.sharp.value_at(t)?;
    let (lam, _) = f.lambda_weighted.value_at(t)?;
    Ok(CheckRecord::new(
        format!("{label} sharp at T={t}"),
        "sharp functional <= lambda-weighted functional",
        sharp,
        sharp <= lam * (1.0 + 1e-12),
    )
    .with_se(se)
    .with_bound(lam))
}

pub(crate) fn decomposition_record(label: &str, est: &FunctionalEstimate) -> CheckRecord {
    let err = est.decomposition_error();
    CheckRecord::new(
        format!("{label} decomposition"),
        "cumulative value equals dt times the sum of per-step integrand means",
        err,
        err <= 1e-12,
    )
    .with_bound(1e-12)
}

const AGG_HEADER: [&str; 12] = [
    "n",
    "mass",
    "t",
    "eta",
    "forward_lambda",
    "forward_lambda_se",
    "forward_sharp",
    "reversed_lambda",
    "reversed_lambda_se",
    "reversed_sharp",
    "theory_curve",
    "reversed_cap",
];

fn functional_sweep(config: &ExperimentConfig, grid: &SweepSection) -> Result<(Vec<RunReport>, Table)> {
    let kind = config.scenario;
    let ns = or_base(&grid.n, config.system.n);
    let masses = or_base(&grid.mass, config.system.mass);
    let ts = or_base(&grid.t, config.integration.t);
    let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let etas: Vec<Option<f64>> = if grid.eta.is_empty() {
        vec![config.theory.eta]
    } else {
        grid.eta.iter().map(|&e| Some(e)).collect()
    };
    let consts: Vec<Option<TheoryConstants>> =
        etas.iter().map(|&e| constants_for(config, e)).collect::<Result<_>>()?;
    let params = config.params()?;
    let k_sup = config.kernel.sup_norm(params.d)?;
    let lambda = params.nondegenerate_lambda()?;
    let (want_forward, want_reversed) = match kind {
        ScenarioKind::BoundDominance => (true, false),
        ScenarioKind::MassIndependence => (true, true),
        _ => (false, true),
    };

    let mut aggregate = Table::new("aggregate", &AGG_HEADER);
    let mut reports = Vec::new();
    let r = config.montecarlo.realizations;
    let mut cached: Option<(u64, usize, Option<ReferenceCloud>)> = None;
    for &mass in &masses {
        for &n in &ns {
            let started = Instant::now();
            let scn = config.scenario_for(n, mass, t_max)?;
            let m = config.cloud_size(n);
            let hit = matches!(&cached, Some((bits, size, _)) if *bits == mass.to_bits() && *size == m);
            if !hit {
                drop(cached.take());
                cached = Some((mass.to_bits(), m, cloud_for(config, &scn, n)?));
            }
            let cloud = cached.as_ref().and_then(|c| c.2.as_ref());
            let forward = want_forward.then(|| forward_kl_bound(&scn, cloud, r)).transpose()?;
            let reversed = want_reversed.then(|| reversed_kl_functional(&scn, cloud, r)).transpose()?;
            let elapsed = started.elapsed().as_secs_f64();

            for &t in &ts {
                for (eta, c) in etas.iter().zip(&consts) {
                    let mut point = BTreeMap::from([
                        ("n".to_string(), n as f64),
                        ("mass".to_string(), mass),
                        ("t".to_string(), t),
                    ]);
                    if eta.is_some() {
                        point.insert("eta".into(), c.map_or(f64::NAN, |c| c.eta));
                    }
                    let mut report = blank_report(config, point);
                    let curve = curve_at(c.as_ref(), &[t])?[0];
                    let cap = reversed_cap(k_sup, t, n, lambda);
                    let mut row = vec![n as f64, mass, t, c.map_or(f64::NAN, |c| c.eta)];
                    if let Some(f) = &forward {
                        report.records.push(below_curve("forward lambda-weighted", &f.lambda_weighted, t, curve)?);
                        report.records.push(sharp_below_lambda("forward", f, t)?);
                        if kind == ScenarioKind::MassIndependence {
                            report.records.push(below_curve("forward sharp", &f.sharp, t, curve)?);
                        }
                        report.records.push(decomposition_record("forward lambda-weighted", &f.lambda_weighted));
                        report.tables.push(curve_table("forward_curve", f, t, c.as_ref())?);
                        let (v, se) = f.lambda_weighted.value_at(t)?;
                        row.extend([v, se, f.sharp.value_at(t)?.0]);
                    } else {
                        row.extend([f64::NAN; 3]);
                    }
                    if let Some(f) = &reversed {
                        let (v, se) = f.lambda_weighted.value_at(t)?;
                        if kind == ScenarioKind::MassIndependence {
                            report.records.push(below_curve("reversed lambda-weighted", &f.lambda_weighted, t, curve)?);
                            report.records.push(below_curve("reversed sharp", &f.sharp, t, curve)?);
                        } else {
                            report.records.push(
                                CheckRecord::new(
                                    format!("reversed lambda-weighted at T={t}"),
                                    "reversed functional <= 4 |K|^2 T N / ((N - 1) lambda)",
                                    v,
                                    v <= cap,
                                )
                                .with_se(se)
                                .with_bound(cap),
                            );
                        }
                        report.records.push(sharp_below_lambda("reversed", f, t)?);
                        report.records.push(decomposition_record("reversed lambda-weighted", &f.lambda_weighted));
                        report.tables.push(curve_table("reversed_curve", f, t, c.as_ref())?);
                        row.extend([v, se, f.sharp.value_at(t)?.0]);
                    } else {
                        row.extend([f64::NAN; 3]);
                    }
                    row.extend([curve, cap]);
                    aggregate.rows.push(row);
                    report.wall_clock_seconds = elapsed;
                    reports.push(report);
                }
            }
        }
    }
    Ok((reports, aggregate))
}

/// Relative spread `(max - min) / mean`.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if max == min {
        0.0
    } else {
        (max - min) / mean
    }
}

/// Least-squares slope through the origin and the largest relative residual.
pub fn origin_fit(ts: &[f64], values: &[f64]) -> (f64, f64) {
    let num: f64 = ts.iter().zip(values).map(|(t, v)| t * v).sum();
    let den: f64 = ts.iter().map(|t| t * t).sum();
    let slope = num / den;
    let worst = ts
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let fit = slope * t;
            if fit == 0.0 {
                if *v == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                ((v - fit) / fit).abs()
            }
        })
        .fold(0.0, f64::max);
    (slope, worst)
}

/// Groups aggregate rows by the columns in `key` and returns `(key values, rows)`.
fn group_by<'a>(table: &'a Table, key: &[usize]) -> Vec<(Vec<f64>, Vec<&'a Vec<f64>>)> {
    let mut groups: Vec<(Vec<f64>, Vec<&Vec<f64>>)> = Vec::new();
    for row in &table.rows {
        let k: Vec<f64> = key.iter().map(|&i| row[i]).collect();
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        match groups.iter_mut().find(|(g, _)| same(g, &k)) {
            Some((_, rows)) => rows.push(row),
            None => groups.push((k, vec![row])),
        }
    }
    groups
}

const COL_N: usize = 0;
const COL_MASS: usize = 1;
const COL_T: usize = 2;
const COL_ETA: usize = 3;
const COL_FWD: usize = 4;
const COL_FWD_SHARP: usize = 6;
const COL_REV: usize = 7;
const COL_REV_SHARP: usize = 9;
const COL_CURVE: usize = 10;

/// Spread threshold for N-uniformity and residual threshold for linearity in `T`.
pub const SWEEP_TOLERANCE: f64 = 0.25;

fn aggregate_checks(config: &ExperimentConfig, table: &Table) -> Vec<CheckRecord> {
    let mut out = Vec::new();
    match config.scenario {
        ScenarioKind::BoundDominance => {
            let first_eta = table.rows.first().map(|r| r[COL_ETA]);
            for (key, rows) in group_by(table, &[COL_MASS, COL_T]) {
                let rows: Vec<_> = rows
                    .into_iter()
                    .filter(|r| Some(r[COL_ETA]).map(f64::to_bits) == first_eta.map(f64::to_bits))
                    .collect();
                if rows.len() < 2 {
                    continue;
                }
                let values: Vec<f64> = rows.iter().map(|r| r[COL_FWD]).collect();
                let spread = relative_spread(&values);
                out.push(
                    CheckRecord::new(
                        format!("N-spread at mass={}, T={}", key[0], key[1]),
                        "(max - min) / mean of the forward functional across N <= 0.25",
                        spread,
                        spread <= SWEEP_TOLERANCE,
                    )
                    .with_bound(SWEEP_TOLERANCE),
                );
            }
        }
        ScenarioKind::MassIndependence => {
            for (key, rows) in group_by(table, &[COL_N, COL_T, COL_ETA]) {
                let worst = rows
                    .iter()
                    .flat_map(|r| [r[COL_FWD], r[COL_FWD_SHARP], r[COL_REV], r[COL_REV_SHARP]])
                    .filter(|v| !v.is_nan())
                    .fold(f64::NEG_INFINITY, f64::max);
                let curve = rows[0][COL_CURVE];
                out.push(
                    CheckRecord::new(
                        format!("largest functional over mass at N={}, T={}", key[0], key[1]),
                        "every functional below the single mass-independent curve",
                        worst,
                        worst <= curve,
                    )
                    .with_bound(curve),
                );
            }
        }
        ScenarioKind::ReversedLinearity => {
            let first_eta = table.rows.first().map(|r| r[COL_ETA]);
            for (key, rows) in group_by(table, &[COL_N, COL_MASS]) {
                let rows: Vec<_> = rows
                    .into_iter()
                    .filter(|r| Some(r[COL_ETA]).map(f64::to_bits) == first_eta.map(f64::to_bits))
                    .collect();
                if rows.len() < 2 {
                    continue;
                }
                let ts: Vec<f64> = rows.iter().map(|r| r[COL_T]).collect();
                let vs: Vec<f64> = rows.iter().map(|r| r[COL_REV]).collect();
                let (slope, worst) = origin_fit(&ts, &vs);
                out.push(
                    CheckRecord::new(
                        format!("linear fit in T at N={}, mass={} (slope {slope:.6e})", key[0], key[1]),
                        "reversed functional fits a line through the origin with relative residuals < 0.25",
                        worst,
                        worst < SWEEP_TOLERANCE,
                    )
                    .with_bound(SWEEP_TOLERANCE),
                );
            }
        }
        _ => {}
    }
    out
}

/// Terminal states of `r` interacting realizations, in realization order.
pub(crate) fn terminal_states(scn: &Scenario, r: usize) -> Result<Vec<(Vec<f64>, Option<Vec<f64>>)>> {
    map_indexed(r, |i| scn.run_interacting(i, None))
}
