//! Configuration files, scenario presets, sweeps and report generation.

mod config;
mod report;
mod runner;
mod suites;

pub use config::{
    ExperimentConfig, IntegrationSection, MeanfieldSection, MonteCarloSection, OutputSection, ScenarioKind,
    SigmaSpec, SuiteSection, SweepSection, SystemSection, TheorySection, PRESET_NOTE,
};
pub use report::{
    emit_report, emit_report_formats, load_reports, OUTPUT_FORMATS, to_json, CheckRecord, ReportSummary, RunReport, Table,
};
pub use runner::{origin_fit, relative_spread, run_scenario, run_sweep, SweepOutcome, SWEEP_TOLERANCE};
pub use suites::{CLOSED_FORM_TOL, FUZZ_STATES, KNN_TOL, ORACLE_ROUTE_TOL};
