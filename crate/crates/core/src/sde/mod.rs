//! Euler–Maruyama engines for the interacting and mean-field-driven systems,
//! the reference cloud and the solution map.

mod cloud;
mod engine;
mod path;
mod simulate;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cloud::{
    build_reference_cloud, meanfield_drift, meanfield_drift_with_se, CloudDrift, CloudProvenance,
    CloudSource, ReferenceCloud,
};
pub use engine::{pairwise_field, StepObserver};
pub use path::{time_marginal, Marginal, NoisePath, NoiseRecord, PathBundle};
pub use simulate::{
    simulate_interacting, simulate_interacting_1st, simulate_interacting_2nd,
    simulate_interacting_with_increments, simulate_meanfield_driven, solution_map_phi,
    InitialState, Scenario,
};

/// First-order (overdamped) or second-order (kinetic) dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

impl Order {
    /// Coordinates per particle: `x` or `(x, v)`.
    pub fn coords(self, d: usize) -> usize {
        match self {
            Order::First => d,
            Order::Second => 2 * d,
        }
    }

    pub fn as_u32(self) -> u32 {
        match self {
            Order::First => 1,
            Order::Second => 2,
        }
    }

    pub fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Order::First),
            2 => Some(Order::Second),
            _ => None,
        }
    }
}

type DriftFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Confining drift `b(x)` of the first-order system.
#[derive(Clone, Default)]
pub enum ExternalDrift {
    #[default]
    None,
    /// `b(x) = -beta x`.
    Confining { beta: f64 },
    Custom(Arc<DriftFn>),
}

impl ExternalDrift {
    pub fn custom(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        ExternalDrift::Custom(Arc::new(f))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ExternalDrift::None)
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ExternalDrift::None => out.iter_mut().for_each(|o| *o = 0.0),
            ExternalDrift::Confining { beta } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -beta * xi;
                }
            }
            ExternalDrift::Custom(f) => f(x, out),
        }
    }
}

impl fmt::Debug for ExternalDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalDrift::None => write!(f, "None"),
            ExternalDrift::Confining { beta } => write!(f, "Confining {{ beta: {beta} }}"),
            ExternalDrift::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}
