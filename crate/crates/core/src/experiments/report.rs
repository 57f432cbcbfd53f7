use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::sig17;

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The invariant this record verifies.
    pub invariant: String,
    #[serde(deserialize_with = "nan_if_null")]
    pub value: f64,
    pub se: Option<f64>,
    pub bound: Option<f64>,
    pub passed: bool,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, invariant: impl Into<String>, value: f64, passed: bool) -> Self {
        CheckRecord {
            name: name.into(),
            invariant: invariant.into(),
            value,
            se: None,
            bound: None,
            passed,
        }
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }
}

/// Plot-ready numeric table written as CSV next to the JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| sig17(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub description: String,
    pub note: String,
    pub config_hash: String,
    pub seed: u64,
    /// Coordinates of this report inside a sweep (`n`, `mass`, `t`, `eta`, ...).
    pub point: BTreeMap<String, f64>,
    pub records: Vec<CheckRecord>,
    #[serde(skip)]
    pub tables: Vec<Table>,
    pub budget_seconds: f64,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.passed)
    }

    /// File stem unique within a sweep.
    pub fn stem(&self) -> String {
        let mut s = self.scenario.clone();
        for (k, v) in &self.point {
            s.push_str(&format!("_{k}{v}"));
        }
        s.replace(['/', ' '], "_")
    }
}

/// `serde_json` formatter that prints every float with 17 significant digits.
struct Sig17Formatter;

impl serde_json::ser::Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(sig17(value).as_bytes())
    }
}

/// JSON text with 17-significant-digit floats (non-finite values become `null`).
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17Formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Config(format!("JSON serialization failed: {e}")))?;
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

/// Rendered output of [`emit_report`].
#[derive(Clone, Debug)]
pub struct ReportSummary {
    pub text: String,
    pub json: String,
    pub passed: bool,
}

impl ReportSummary {
    /// Process exit code: 0 iff every check passed.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

/// Text table plus JSON for a batch of reports; when `out_dir` is given, also
/// writes `summary.md`, `reports.json` and one CSV per report table.
pub fn emit_report(reports: &[RunReport], out_dir: Option<&Path>) -> Result<ReportSummary> {
    emit_report_formats(reports, out_dir, &OUTPUT_FORMATS.map(String::from))
}

/// Formats accepted in the `[output]` section.
pub const OUTPUT_FORMATS: [&str; 2] = ["json", "csv"];

/// [`emit_report`] restricted to the listed output formats; `summary.md` is always written.
pub fn emit_report_formats(reports: &[RunReport], out_dir: Option<&Path>, formats: &[String]) -> Result<ReportSummary> {
    if let Some(bad) = formats.iter().find(|f| !OUTPUT_FORMATS.contains(&f.as_str())) {
        return Err(Error::Config(format!("unknown output format {bad:?}")));
    }
    let wants = |f: &str| formats.iter().any(|x| x == f);
    if reports.is_empty() {
        return Err(Error::Config("no reports to emit".into()));
    }
    if let Some(empty) = reports.iter().find(|r| r.records.is_empty()) {
        return Err(Error::Config(format!("report {} has no checked quantities", empty.scenario)));
    }
    let mut text = String::new();
    for r in reports {
        text.push_str(&format!("## {} [{}]\n", r.scenario, if r.passed() { "PASS" } else { "FAIL" }));
        if !r.description.is_empty() {
            text.push_str(&format!("{}\n", r.description));
        }
        text.push_str(&format!("_{}_\n\n", r.note));
        if !r.point.is_empty() {
            let coords: Vec<String> = r.point.iter().map(|(k, v)| format!("{k}={v}")).collect();
            text.push_str(&format!("point: {}\n", coords.join(", ")));
        }
        text.push_str(&format!(
            "seed: {}, config: {}, wall clock: {:.2} s (budget {:.0} s)\n\n",
            r.seed, r.config_hash, r.wall_clock_seconds, r.budget_seconds
        ));
        text.push_str("| check | invariant | value | se | bound | result |\n|---|---|---|---|---|---|\n");
        for c in &r.records {
            text.push_str(&format!(
                "| {} | {} | {:.6e} | {} | {} | {} |\n",
                c.name,
                c.invariant,
                c.value,
                fmt_opt(c.se),
                fmt_opt(c.bound),
                if c.passed { "pass" } else { "FAIL" }
            ));
        }
        text.push('\n');
    }
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures().map(move |c| format!("{}: {}", r.scenario, c.name)))
        .collect();
    let passed = failing.is_empty();
    if passed {
        text.push_str("all checks passed\n");
    } else {
        text.push_str(&format!("{} failing check(s):\n", failing.len()));
        for f in &failing {
            text.push_str(&format!("- {f}\n"));
        }
    }
    let json = to_json(&reports)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &str| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("summary.md", &text)?;
        if wants("json") {
            write("reports.json", &json)?;
        }
        if wants("csv") {
            for r in reports {
                for t in &r.tables {
                    write(&format!("{}_{}.csv", r.stem(), t.name), &t.to_csv())?;
                }
            }
        }
    }
    Ok(ReportSummary { text, json, passed })
}

/// Reads a `reports.json` written by [`emit_report`].
pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<RunReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(passed: bool) -> RunReport {
        RunReport {
            scenario: "demo".into(),
            description: String::new(),
            note: "note".into(),
            config_hash: "abc".into(),
            seed: 1,
            point: BTreeMap::from([("n".to_string(), 4.0)]),
            records: vec![CheckRecord::new("x", "x >= 0", 0.1, passed).with_se(0.01).with_bound(1.0)],
            tables: vec![{
                let mut t = Table::new("curve", &["t", "v"]);
                t.rows.push(vec![0.5, 1.0 / 3.0]);
                t
            }],
            budget_seconds: 1.0,
            wall_clock_seconds: 0.0,
        }
    }

    #[test]
    fn json_uses_seventeen_digits() {
        let json = to_json(&vec![0.1, 1.0 / 3.0, f64::NAN]).unwrap();
        assert_eq!(json, "[1.0000000000000001e-1,3.3333333333333331e-1,null]");
        let back: Vec<Option<f64>> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[1], Some(1.0 / 3.0));
    }

    #[test]
    fn exit_code_contract() {
        assert!(emit_report(&[], None).is_err());
        let mut empty = report(true);
        empty.records.clear();
        assert!(emit_report(&[empty], None).is_err());
        let ok = emit_report(&[report(true)], None).unwrap();
        assert_eq!(ok.exit_code(), 0);
        let bad = emit_report(&[report(true), report(false)], None).unwrap();
        assert_eq!(bad.exit_code(), 1);
        assert!(bad.text.contains("demo: x"));
    }

    #[test]
    fn writes_files_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[report(true)], Some(dir.path())).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("demo_n4_curve.csv")).unwrap();
        assert_eq!(csv, "t,v\n5.0000000000000000e-1,3.3333333333333331e-1\n");
        let back = load_reports(dir.path().join("reports.json")).unwrap();
        assert_eq!(back[0].records, report(true).records);
        assert!(dir.path().join("summary.md").exists());

        let only_json = tempfile::tempdir().unwrap();
        emit_report_formats(&[report(true)], Some(only_json.path()), &["json".into()]).unwrap();
        assert!(only_json.path().join("reports.json").exists());
        assert!(!only_json.path().join("demo_n4_curve.csv").exists());
        assert!(emit_report_formats(&[report(true)], None, &["xml".into()]).is_err());
    }
}
