use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaoslab::experiments::{
    emit_report_formats, load_reports, run_scenario, run_sweep, ExperimentConfig, RunReport, ScenarioKind,
    OUTPUT_FORMATS,
};
use clap::{Args, Parser, Subcommand};

/// Monte Carlo laboratory for propagation of chaos in mean-field particle systems.
#[derive(Parser, Debug)]
#[command(name = "chaoslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the interacting system and summarize terminal states.
    Simulate(RunArgs),
    /// Forward path-space functional against the explicit bound curve.
    KlBound(RunArgs),
    /// Reversed functional along mean-field-driven paths.
    Reversed(RunArgs),
    /// Linear-kernel Monte Carlo against the exact Gaussian oracle.
    Oracle(RunArgs),
    /// Exponential-moment and Marcinkiewicz-Zygmund checks.
    Concentration(RunArgs),
    /// Discrete divergence inequalities, the Gaussian channel and the k-NN estimator.
    DpiSuite(RunArgs),
    /// Every point of the configuration's sweep lists plus the aggregate checks.
    Sweep(RunArgs),
    /// Re-render the summary of a previous run.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a configuration file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to the configuration's `[output] directory`.
    #[arg(long, env = "CHAOSLAB_OUT")]
    out: Option<PathBuf>,
    /// Overrides `montecarlo.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; changes speed only, never results.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `reports.json` or the directory holding it.
    path: PathBuf,
    /// Directory to rewrite `summary.md` and `reports.json` into.
    #[arg(long, env = "CHAOSLAB_OUT")]
    out: Option<PathBuf>,
}

impl Command {
    fn default_preset(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::KlBound(_) => "bound-dominance",
            Command::Reversed(_) => "reversed-linearity",
            Command::Oracle(_) => "oracle-validation",
            Command::Concentration(_) => "concentration",
            Command::DpiSuite(_) => "dpi-suite",
            Command::Sweep(_) => "bound-dominance",
            Command::Report(_) => unreachable!("report takes no preset"),
        }
    }

    fn accepts(&self, kind: ScenarioKind) -> bool {
        use ScenarioKind::*;
        match self {
            Command::Simulate(_) => kind == Simulate,
            Command::KlBound(_) => matches!(kind, BoundDominance | MassIndependence | Martingale | ZeroKernelNull),
            Command::Reversed(_) => kind == ReversedLinearity,
            Command::Oracle(_) => kind == OracleValidation,
            Command::Concentration(_) => kind == Concentration,
            Command::DpiSuite(_) => matches!(kind, DpiSuite | KnnSanity),
            Command::Sweep(_) | Command::Report(_) => true,
        }
    }
}

fn load_config(cmd: &Command, args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::from_file(path).map_err(|e| e.to_string())?,
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(|e| e.to_string())?,
        (None, None) => ExperimentConfig::preset(cmd.default_preset()).map_err(|e| e.to_string())?,
    };
    if !cmd.accepts(config.scenario) {
        return Err(format!(
            "scenario {} does not belong to this subcommand",
            config.scenario.name()
        ));
    }
    if let Some(seed) = args.seed {
        config.montecarlo.master_seed = seed;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn run(cmd: &Command, args: &RunArgs) -> Result<ExitCode, String> {
    let config = load_config(cmd, args)?;
    if args.dump_config {
        print!("{}", config.to_toml_string().map_err(|e| e.to_string())?);
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let reports: Vec<RunReport> = match cmd {
        Command::Sweep(_) => run_sweep(&config).map_err(|e| e.to_string())?.reports,
        Command::KlBound(_) | Command::Reversed(_) if !config.sweep.is_empty() => {
            run_sweep(&config).map_err(|e| e.to_string())?.reports
        }
        _ => vec![run_scenario(&config).map_err(|e| e.to_string())?],
    };
    let out = args.out.clone().or_else(|| config.output.directory.clone());
    emit(&reports, out.as_deref(), &config.output.formats)
}

fn emit(reports: &[RunReport], out: Option<&Path>, formats: &[String]) -> Result<ExitCode, String> {
    let summary = emit_report_formats(reports, out, formats).map_err(|e| e.to_string())?;
    print!("{}", summary.text);
    if let Some(dir) = out {
        log::info!("wrote results to {}", dir.display());
    }
    Ok(ExitCode::from(summary.exit_code() as u8))
}

fn report(args: &ReportArgs) -> Result<ExitCode, String> {
    let path = if args.path.is_dir() {
        args.path.join("reports.json")
    } else {
        args.path.clone()
    };
    let reports = load_reports(&path).map_err(|e| e.to_string())?;
    let formats: Vec<String> = if args.out.is_some() {
        vec![OUTPUT_FORMATS[0].to_string()]
    } else {
        Vec::new()
    };
    emit(&reports, args.out.as_deref(), &formats)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Report(args) => report(args),
        Command::Simulate(a)
        | Command::KlBound(a)
        | Command::Reversed(a)
        | Command::Oracle(a)
        | Command::Concentration(a)
        | Command::DpiSuite(a)
        | Command::Sweep(a) => run(&cli.command, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
