use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel {0} is unbounded; sup-norm dependent quantities are undefined")]
    UnboundedKernel(&'static str),

    #[error("diffusion is degenerate: smallest eigenvalue of sigma sigma^T is {lambda:e}")]
    DegenerateDiffusion { lambda: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least 2 particles, got {0}")]
    TooFewParticles(usize),

    #[error("non-finite state at step {step} (realization {realization})")]
    NumericalBlowup { step: usize, realization: u64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("eta = {eta} outside the admissible interval (0, {upper})")]
    EtaOutOfRange { eta: f64, upper: f64 },

    #[error("support of the first measure is not contained in the support of the second")]
    SupportViolation,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("exchangeable Gaussian lost positive definiteness at t = {time}")]
    OraclePdFailure { time: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("marginal size k = {k} outside 1..={n}")]
    MarginalOutOfRange { k: usize, n: usize },

    #[error("moment order p = {0} must be even and at least 2")]
    OddMomentOrder(u32),

    #[error("malformed cloud file: {0}")]
    CloudFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
