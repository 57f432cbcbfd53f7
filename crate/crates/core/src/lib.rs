//! Monte Carlo laboratory for propagation of chaos in mean-field particle systems.

pub mod error;
pub mod experiments;
pub mod girsanov;
pub mod info;
pub mod model;
pub mod oracle;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
