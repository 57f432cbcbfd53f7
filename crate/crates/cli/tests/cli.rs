use std::path::Path;
use std::process::{Command, Output};

use chaoslab::experiments::load_reports;

fn chaoslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoslab"))
        .args(args)
        .env_remove("CHAOSLAB_OUT")
        .output()
        .expect("binary runs")
}

const SMALL_SWEEP: &str = r#"
scenario = "reversed-linearity"

[system]
order = "second"
n = 4
d = 1
sigma = 1.0

[kernel]
variant = "sine"
kappa = 1.0
omega = 1.0

[meanfield]
m = 200

[integration]
t = 0.2
dt = 0.01

[montecarlo]
realizations = 16
master_seed = 5

[sweep]
t = [0.1, 0.2]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn strip_wall_clock(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .split(',')
        .filter(|field| !field.contains("wall_clock_seconds"))
        .map(String::from)
        .collect()
}

#[test]
fn dpi_suite_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = chaoslab(&["dpi-suite", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mass channel m=2"));
    assert!(text.contains("all checks passed"));
    assert!(dir.path().join("summary.md").exists());
    let reports = load_reports(dir.path().join("reports.json")).unwrap();
    assert_eq!(reports[0].scenario, "dpi-suite");
    assert_eq!(reports[0].config_hash.len(), 64);

    let again = chaoslab(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
    assert!(String::from_utf8(again.stdout).unwrap().contains("all checks passed"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chaoslab"))
        .args(["dpi-suite", "--preset", "knn-sanity"])
        .env("CHAOSLAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("reports.json").exists());
}

#[test]
fn sweep_outputs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_SWEEP);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = chaoslab(&["reversed", "--config", &config, "--out", a.to_str().unwrap(), "--threads", "1"]);
    let rb = chaoslab(&["sweep", "--config", &config, "--out", b.to_str().unwrap(), "--threads", "3"]);
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stdout));
    assert_eq!(rb.status.code(), Some(0));
    let mut csvs: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_str().unwrap().ends_with(".csv"))
        .collect();
    csvs.sort();
    assert!(csvs.iter().any(|n| n.to_str().unwrap().contains("aggregate")));
    assert!(csvs.len() >= 3);
    for name in &csvs {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
    assert_eq!(
        strip_wall_clock(&a.join("reports.json")),
        strip_wall_clock(&b.join("reports.json"))
    );
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_SWEEP);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    chaoslab(&["reversed", "--config", &config, "--out", a.to_str().unwrap()]);
    chaoslab(&["reversed", "--config", &config, "--out", b.to_str().unwrap(), "--seed", "6"]);
    let ra = load_reports(a.join("reports.json")).unwrap();
    let rb = load_reports(b.join("reports.json")).unwrap();
    assert_eq!(rb[0].seed, 6);
    assert_ne!(ra[0].records[0].value, rb[0].records[0].value);
    assert_ne!(ra[0].config_hash, rb[0].config_hash);
}

#[test]
fn failing_record_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"[{"scenario":"demo","description":"","note":"n","config_hash":"h","seed":1,"point":{},
        "records":[{"name":"ok","invariant":"x","value":1.0,"se":null,"bound":null,"passed":true},
                   {"name":"broken","invariant":"y","value":null,"se":null,"bound":2.0,"passed":false}],
        "budget_seconds":1.0,"wall_clock_seconds":0.1}]"#;
    let path = dir.path().join("reports.json");
    std::fs::write(&path, json).unwrap();
    let out = chaoslab(&["report", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("demo: broken"));
}

#[test]
fn invalid_inputs_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL_SWEEP.replace("dt = 0.01", "dt = 0.03"));
    let out = chaoslab(&["sweep", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("multiple of dt"));

    let unknown = write_config(dir.path(), &format!("{SMALL_SWEEP}\n[extra]\nx = 1\n"));
    assert_eq!(chaoslab(&["sweep", "--config", &unknown]).status.code(), Some(2));

    let out = chaoslab(&["oracle", "--preset", "dpi-suite"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("does not belong"));

    assert_eq!(chaoslab(&["simulate", "--preset", "no-such-preset"]).status.code(), Some(2));
    assert_eq!(chaoslab(&["report", dir.path().join("missing.json").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn dumped_presets_parse_back() {
    for (cmd, preset) in [
        ("oracle", "oracle-validation"),
        ("kl-bound", "mass-independence"),
        ("concentration", "concentration"),
    ] {
        let out = chaoslab(&[cmd, "--preset", preset, "--dump-config"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(&format!("scenario = \"{preset}\"")));
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &text);
        let again = chaoslab(&[cmd, "--config", &path, "--dump-config"]);
        assert_eq!(again.stdout, text.as_bytes());
    }
}

#[test]
fn simulate_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_SWEEP.replace("reversed-linearity", "simulate").replace("t = [0.1, 0.2]", "");
    let config = write_config(dir.path(), &text);
    let out_dir = dir.path().join("o");
    let out = chaoslab(&["simulate", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(out_dir.join("simulate_terminal.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("realization,particle,x0,v0"));
    assert_eq!(lines.count(), 16 * 4);
}
