use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{sigma_from_rows, InitialLaw, KernelSpec, RngPolicy, SystemParams, TimeGrid};
use crate::sde::{Order, Scenario};

use super::report::OUTPUT_FORMATS;

/// What a configuration runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Terminal-state summary of the interacting system.
    Simulate,
    ZeroKernelNull,
    DpiSuite,
    KnnSanity,
    OracleValidation,
    Martingale,
    BoundDominance,
    MassIndependence,
    ReversedLinearity,
    Concentration,
}

impl ScenarioKind {
    pub const PRESETS: [ScenarioKind; 9] = [
        ScenarioKind::ZeroKernelNull,
        ScenarioKind::DpiSuite,
        ScenarioKind::KnnSanity,
        ScenarioKind::OracleValidation,
        ScenarioKind::Martingale,
        ScenarioKind::BoundDominance,
        ScenarioKind::MassIndependence,
        ScenarioKind::ReversedLinearity,
        ScenarioKind::Concentration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Simulate => "simulate",
            ScenarioKind::ZeroKernelNull => "zero-kernel-null",
            ScenarioKind::DpiSuite => "dpi-suite",
            ScenarioKind::KnnSanity => "knn-sanity",
            ScenarioKind::OracleValidation => "oracle-validation",
            ScenarioKind::Martingale => "martingale",
            ScenarioKind::BoundDominance => "bound-dominance",
            ScenarioKind::MassIndependence => "mass-independence",
            ScenarioKind::ReversedLinearity => "reversed-linearity",
            ScenarioKind::Concentration => "concentration",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        std::iter::once(ScenarioKind::Simulate)
            .chain(Self::PRESETS)
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario {name:?}")))
    }

    /// Wall-clock budget in seconds on a single desk core.
    pub fn budget_seconds(self) -> f64 {
        match self {
            ScenarioKind::Simulate | ScenarioKind::ZeroKernelNull => 60.0,
            ScenarioKind::DpiSuite => 10.0,
            ScenarioKind::KnnSanity | ScenarioKind::Concentration => 60.0,
            ScenarioKind::Martingale => 120.0,
            ScenarioKind::OracleValidation => 180.0,
            ScenarioKind::ReversedLinearity => 300.0,
            ScenarioKind::BoundDominance | ScenarioKind::MassIndependence => 600.0,
        }
    }
}

/// `sigma` as a scalar multiple of the identity or as explicit `d x d'` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub order: Order,
    pub n: usize,
    pub d: usize,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    pub sigma: SigmaSpec,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanfieldSection {
    /// Cloud size; `max(10^4, 10 N)` when absent.
    pub m: Option<usize>,
    #[serde(default = "default_refine")]
    pub refine_iters: usize,
}

fn default_refine() -> usize {
    1
}

impl Default for MeanfieldSection {
    fn default() -> Self {
        MeanfieldSection {
            m: None,
            refine_iters: default_refine(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    pub t: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub realizations: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub mass: Vec<f64>,
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
}

impl SweepSection {
    pub fn is_empty(&self) -> bool {
        self.n.is_empty() && self.mass.is_empty() && self.t.is_empty() && self.eta.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    /// Defaults to half the admissible range.
    pub eta: Option<f64>,
}

/// Sizes for the suites that do not simulate particle paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub fuzz_cases: usize,
    pub resamples: usize,
    pub mz_terms: usize,
    pub mz_samples: usize,
    pub knn_samples: usize,
    pub knn_k: usize,
    /// Particle counts for the oracle's N-uniformity check.
    pub oracle_n: Vec<usize>,
    /// Marginal sizes for the linear-scaling check.
    pub scaling_k: Vec<usize>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        SuiteSection {
            fuzz_cases: 1000,
            resamples: 100_000,
            mz_terms: 10,
            mz_samples: 100_000,
            knn_samples: 100_000,
            knn_k: 1,
            oracle_n: vec![4, 8, 16, 32, 64],
            scaling_k: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: None,
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

/// One experiment: a scenario kind plus every parameter it reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub description: String,
    pub system: SystemSection,
    pub kernel: KernelSpec,
    /// Per-particle initial law; standard normal on every coordinate when absent.
    #[serde(default)]
    pub init: Option<InitialLaw>,
    #[serde(default)]
    pub meanfield: MeanfieldSection,
    pub integration: IntegrationSection,
    pub montecarlo: MonteCarloSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub suite: SuiteSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Note attached to every report header.
pub const PRESET_NOTE: &str =
    "preset parameters are desk-scale choices of this laboratory, not values taken from any published experiment";

impl ExperimentConfig {
    /// The shared baseline: second-order sine force, `N = 16`, `d = 1`,
    /// `M = 10^4`, `T = 1`, `dt = 10^-3`, `R = 2000`, `sigma = m = gamma = 1`.
    pub fn baseline(scenario: ScenarioKind) -> Self {
        ExperimentConfig {
            scenario,
            description: String::new(),
            system: SystemSection {
                order: Order::Second,
                n: 16,
                d: 1,
                mass: 1.0,
                gamma: 1.0,
                sigma: SigmaSpec::Scalar(1.0),
            },
            kernel: KernelSpec::Sine { kappa: 1.0, omega: 1.0 },
            init: None,
            meanfield: MeanfieldSection {
                m: Some(10_000),
                refine_iters: 1,
            },
            integration: IntegrationSection { t: 1.0, dt: 1e-3 },
            montecarlo: MonteCarloSection {
                realizations: 2000,
                master_seed: 20_240_917,
            },
            sweep: SweepSection::default(),
            theory: TheorySection::default(),
            suite: SuiteSection::default(),
            output: OutputSection::default(),
        }
    }

    /// Named preset reproducing one family of inequalities.
    pub fn preset(name: &str) -> Result<Self> {
        let kind = ScenarioKind::from_name(name)?;
        let mut c = Self::baseline(kind);
        match kind {
            ScenarioKind::Simulate => {
                c.description = "interacting second-order sine system, terminal-state summary".into();
                c.montecarlo.realizations = 100;
            }
            ScenarioKind::ZeroKernelNull => {
                c.description = "zero kernel: every functional vanishes identically".into();
                c.kernel = KernelSpec::Zero;
                c.montecarlo.realizations = 200;
            }
            ScenarioKind::DpiSuite => {
                c.description = "data processing, Fenchel-Young, Pinsker and the Gaussian mass channel".into();
            }
            ScenarioKind::KnnSanity => {
                c.description = "nearest-neighbour KL estimator against closed-form Gaussian KL".into();
            }
            ScenarioKind::OracleValidation => {
                c.description = "linear kernel against the exchangeable Gaussian oracle".into();
                c.system.order = Order::First;
                c.kernel = KernelSpec::Linear { a: 0.5 };
                c.montecarlo.realizations = 5000;
                c.sweep.t = vec![0.5, 1.0];
            }
            ScenarioKind::Martingale => {
                c.description = "discrete Girsanov density has unit mean under the interacting law".into();
                c.system.n = 8;
            }
            ScenarioKind::BoundDominance => {
                c.description = "forward functional below the Gronwall curve, uniformly in N".into();
                c.sweep.n = vec![4, 16, 64];
                c.sweep.t = vec![0.5, 1.0];
            }
            ScenarioKind::MassIndependence => {
                c.description = "second-order functionals below one mass-independent curve".into();
                c.sweep.mass = vec![0.1, 1.0, 10.0];
            }
            ScenarioKind::ReversedLinearity => {
                c.description = "reversed functional linear in T and below its cap".into();
                c.sweep.t = vec![1.0, 2.0, 4.0];
            }
            ScenarioKind::Concentration => {
                c.description = "exponential moment of the resampled quadratic statistic and the MZ inequality".into();
            }
        }
        Ok(c)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Runs every model-level validation without simulating anything.
    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        self.kernel_checked()?;
        self.kernel.check_dim(params.d)?;
        self.grid_for(self.integration.t)?;
        self.initial_law().sampler(self.system.order.coords(self.system.d))?;
        if self.system.n < 2 {
            return Err(Error::TooFewParticles(self.system.n));
        }
        if self.montecarlo.realizations < 2 {
            return Err(Error::Config("montecarlo.realizations must be at least 2".into()));
        }
        if let Some(m) = self.meanfield.m {
            if m < 100 {
                return Err(Error::Config(format!("meanfield.m = {m} is below 100")));
            }
        }
        for &n in &self.sweep.n {
            if n < 2 {
                return Err(Error::TooFewParticles(n));
            }
        }
        for &m in &self.sweep.mass {
            self.params()?.with_mass(m)?;
        }
        for &t in &self.sweep.t {
            self.grid_for(t)?;
        }
        if let Some(eta) = self.theory.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::Config(format!("theory.eta must be positive, got {eta}")));
            }
        }
        if self.sweep.eta.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("sweep.eta entries must be positive".into()));
        }
        if let Some(bad) = self.output.formats.iter().find(|f| !OUTPUT_FORMATS.contains(&f.as_str())) {
            return Err(Error::Config(format!("unknown output format {bad:?}")));
        }
        if self.suite.fuzz_cases == 0 || self.suite.resamples < 2 || self.suite.mz_samples < 2 {
            return Err(Error::Config("suite sizes must be positive".into()));
        }
        Ok(())
    }

    fn kernel_checked(&self) -> Result<KernelSpec> {
        match &self.kernel {
            KernelSpec::Zero => Ok(KernelSpec::Zero),
            KernelSpec::Constant { c } => KernelSpec::constant(c.clone()),
            KernelSpec::Sine { kappa, omega } => KernelSpec::sine(*kappa, *omega),
            KernelSpec::GaussBump { kappa } => KernelSpec::gauss_bump(*kappa),
            KernelSpec::Linear { a } => KernelSpec::linear_oracle_only(*a),
        }
    }

    pub fn params(&self) -> Result<SystemParams> {
        let s = &self.system;
        match &s.sigma {
            SigmaSpec::Scalar(v) => SystemParams::isotropic(s.d, *v, s.mass, s.gamma),
            SigmaSpec::Rows(rows) => {
                let sigma: DMatrix<f64> = sigma_from_rows(rows)?;
                if sigma.nrows() != s.d {
                    return Err(Error::DimensionMismatch {
                        expected: s.d,
                        got: sigma.nrows(),
                    });
                }
                SystemParams::new(sigma, s.mass, s.gamma)
            }
        }
    }

    pub fn initial_law(&self) -> InitialLaw {
        self.init
            .clone()
            .unwrap_or_else(|| InitialLaw::isotropic_gaussian(self.system.order.coords(self.system.d), 0.0, 1.0))
    }

    pub fn grid_for(&self, horizon: f64) -> Result<TimeGrid> {
        TimeGrid::new(horizon, self.integration.dt)
    }

    pub fn policy(&self) -> RngPolicy {
        RngPolicy::new(self.montecarlo.master_seed)
    }

    pub fn cloud_size(&self, n: usize) -> usize {
        self.meanfield.m.unwrap_or_else(|| (10 * n).max(10_000))
    }

    /// Simulation scenario for particle count `n`, mass `mass` and horizon `horizon`.
    pub fn scenario_for(&self, n: usize, mass: f64, horizon: f64) -> Result<Scenario> {
        Scenario::new(
            self.system.order,
            self.params()?.with_mass(mass)?,
            self.kernel.clone(),
            self.initial_law(),
            self.grid_for(horizon)?,
            n,
            self.policy(),
        )
    }

    /// SHA-256 of the canonical JSON form, excluding the output section.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for kind in ScenarioKind::PRESETS {
            let c = ExperimentConfig::preset(kind.name()).unwrap();
            c.validate().unwrap();
            let text = c.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, c, "{}", kind.name());
            assert_eq!(back.hash(), c.hash());
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn parses_hand_written_file() {
        let text = r#"
scenario = "bound-dominance"

[system]
order = "first"
n = 8
d = 2
sigma = [[1.0, 0.0, 0.5], [0.0, 2.0, 0.0]]

[kernel]
variant = "gauss_bump"
kappa = 0.5

[init]
variant = "deterministic_point"
point = [0.0, 1.0]

[integration]
t = 0.5
dt = 0.01

[montecarlo]
realizations = 10
master_seed = 3

[sweep]
n = [4, 8]
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.system.mass, 1.0);
        assert_eq!(c.params().unwrap().d_prime, 3);
        assert_eq!(c.cloud_size(8), 10_000);
        assert_eq!(c.meanfield.refine_iters, 1);
        assert_eq!(c.suite, SuiteSection::default());
    }

    #[test]
    fn validation_runs_before_simulation() {
        let mut c = ExperimentConfig::baseline(ScenarioKind::BoundDominance);
        c.integration.dt = 0.3;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::baseline(ScenarioKind::BoundDominance);
        c.system.n = 1;
        assert!(matches!(c.validate(), Err(Error::TooFewParticles(1))));
        let mut c = ExperimentConfig::baseline(ScenarioKind::BoundDominance);
        c.sweep.mass = vec![1.0, -2.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::baseline(ScenarioKind::BoundDominance);
        c.kernel = KernelSpec::Sine { kappa: f64::NAN, omega: 1.0 };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("scenario = \"dpi-suite\"\n[bogus]\n").is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::baseline(ScenarioKind::Martingale);
        let mut b = a.clone();
        b.output.directory = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.montecarlo.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
