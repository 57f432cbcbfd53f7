use chaoslab::experiments::{run_scenario, ExperimentConfig};

#[test]
fn small_linear_system_matches_the_gaussian_oracle() {
    let mut c = ExperimentConfig::preset("oracle-validation").unwrap();
    c.system.n = 4;
    c.integration.t = 0.4;
    c.integration.dt = 0.005;
    c.montecarlo.realizations = 1500;
    c.sweep.t = vec![0.2, 0.4];
    c.suite.oracle_n = vec![2, 4, 8];
    c.suite.scaling_k = vec![1, 2, 4];
    let report = run_scenario(&c).unwrap();
    assert!(report.passed(), "{:#?}", report.failures().collect::<Vec<_>>());
    for prefix in ["Euler-Maruyama", "eigen-block KL", "KL_1 <=", "(1/k) KL_k", "exact joint KL at t"] {
        assert!(
            report.records.iter().any(|r| r.invariant.starts_with(prefix)),
            "no record for {prefix}"
        );
    }
    assert!(report.tables.iter().any(|t| !t.rows.is_empty()));
}
