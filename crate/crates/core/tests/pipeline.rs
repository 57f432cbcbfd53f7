use chaoslab::experiments::{run_scenario, run_sweep, ExperimentConfig, RunReport};

fn small(preset: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(preset).unwrap();
    c.system.n = 4;
    c.integration.t = 0.2;
    c.integration.dt = 0.01;
    c.montecarlo.realizations = 40;
    c.meanfield.m = Some(300);
    c
}

fn values(r: &RunReport) -> Vec<(String, u64)> {
    r.records.iter().map(|c| (c.name.clone(), c.value.to_bits())).collect()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let config = small("martingale");
    let one = in_pool(1, || run_scenario(&config).unwrap());
    let three = in_pool(3, || run_scenario(&config).unwrap());
    assert_eq!(values(&one), values(&three));
    assert_eq!(one.config_hash, three.config_hash);
}

#[test]
fn seed_controls_the_estimates() {
    let config = small("martingale");
    let mut other = config.clone();
    other.montecarlo.master_seed += 1;
    let a = run_scenario(&config).unwrap();
    let b = run_scenario(&config).unwrap();
    let c = run_scenario(&other).unwrap();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
    assert_ne!(a.config_hash, c.config_hash);
}

#[test]
fn zero_kernel_gives_exact_nulls() {
    let report = run_scenario(&small("zero-kernel-null")).unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    for c in report.records.iter().filter(|c| c.invariant.starts_with("drift mismatch vanishes")) {
        assert_eq!(c.value, 0.0, "{}", c.name);
    }
    let density = report.records.iter().find(|c| c.name.ends_with("Girsanov density mean")).unwrap();
    assert_eq!((density.value, density.se), (1.0, Some(0.0)));
}

#[test]
fn sweep_emits_one_report_per_point_plus_aggregate() {
    let mut config = small("bound-dominance");
    config.sweep.n = vec![3, 5];
    config.sweep.t = vec![0.1, 0.2];
    let out = in_pool(2, || run_sweep(&config).unwrap());
    assert_eq!(out.reports.len(), 5);
    assert!(out.reports.last().unwrap().scenario.ends_with("aggregate"));
    assert_eq!(out.aggregate.rows.len(), 4);
    let sequential = in_pool(1, || run_sweep(&config).unwrap());
    assert_eq!(sequential.aggregate.to_csv(), out.aggregate.to_csv());
}
