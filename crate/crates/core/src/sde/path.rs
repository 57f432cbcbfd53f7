use crate::error::{Error, Result};
use crate::model::{KernelSpec, SystemParams, TimeGrid};

use super::cloud::{CloudDrift, ReferenceCloud};
use super::engine::pairwise_field;
use super::Order;

/// The stochastic input that produced a [`PathBundle`].
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseRecord {
    /// Brownian increments `dW`, `(step, particle, d')`.
    Brownian { d_prime: usize, increments: Vec<f64> },
    /// Forcing increments `d theta` fed to the solution map, `(step, particle, d)`.
    Driving { increments: Vec<f64> },
}

/// One realization of an N-particle system on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub order: Order,
    pub n: usize,
    pub d: usize,
    pub grid: TimeGrid,
    pub realization: u64,
    /// `(step, particle, coords)`, `coords = x` or `(x, v)`.
    pub states: Vec<f64>,
    pub noise: NoiseRecord,
}

impl PathBundle {
    pub fn coords(&self) -> usize {
        self.order.coords(self.d)
    }

    fn offset(&self, step: usize, particle: usize) -> usize {
        (step * self.n + particle) * self.coords()
    }

    pub fn position(&self, step: usize, particle: usize) -> &[f64] {
        let o = self.offset(step, particle);
        &self.states[o..o + self.d]
    }

    pub fn velocity(&self, step: usize, particle: usize) -> Option<&[f64]> {
        match self.order {
            Order::First => None,
            Order::Second => {
                let o = self.offset(step, particle) + self.d;
                Some(&self.states[o..o + self.d])
            }
        }
    }

    /// All particle states at one step.
    pub fn step_states(&self, step: usize) -> &[f64] {
        let w = self.n * self.coords();
        &self.states[step * w..(step + 1) * w]
    }

    /// Positions of all particles at one step, `(particle, d)`.
    pub fn positions_at(&self, step: usize) -> Vec<f64> {
        (0..self.n).flat_map(|p| self.position(step, p).to_vec()).collect()
    }

    pub fn velocities_at(&self, step: usize) -> Option<Vec<f64>> {
        match self.order {
            Order::First => None,
            Order::Second => Some(
                (0..self.n)
                    .flat_map(|p| self.velocity(step, p).unwrap().to_vec())
                    .collect(),
            ),
        }
    }

    pub fn brownian_increments(&self) -> Option<(&[f64], usize)> {
        match &self.noise {
            NoiseRecord::Brownian { d_prime, increments } => Some((increments, *d_prime)),
            NoiseRecord::Driving { .. } => None,
        }
    }

    /// `dW` of one particle at one step.
    pub fn increment(&self, step: usize, particle: usize) -> Option<&[f64]> {
        let (inc, dp) = self.brownian_increments()?;
        let o = (step * self.n + particle) * dp;
        Some(&inc[o..o + dp])
    }

    pub fn terminal_states(&self) -> &[f64] {
        self.step_states(self.grid.n_steps())
    }
}

/// Which part of the state a time marginal extracts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marginal {
    Full,
    Positions,
    Velocities,
}

/// Ensemble state at the grid point nearest to `t`, flattened as `(particle, coords)`.
pub fn time_marginal(bundle: &PathBundle, t: f64, which: Marginal) -> Result<Vec<f64>> {
    let step = bundle.grid.step_of(t)?;
    Ok(match which {
        Marginal::Full => bundle.step_states(step).to_vec(),
        Marginal::Positions => bundle.positions_at(step),
        Marginal::Velocities => bundle
            .velocities_at(step)
            .ok_or_else(|| Error::InvalidParameter("first-order paths carry no velocities".into()))?,
    })
}

/// Forcing path `theta_i(t_n)` of every particle, held as increments so that
/// feeding it back into the solution map is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub n: usize,
    pub d: usize,
    pub grid: TimeGrid,
    /// `(step, particle, d)`.
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn zero(n: usize, d: usize, grid: TimeGrid) -> Self {
        NoisePath {
            n,
            d,
            increments: vec![0.0; grid.n_steps() * n * d],
            grid,
        }
    }

    /// `theta = sigma W` from the bundle's Brownian increments.
    pub fn brownian(bundle: &PathBundle, params: &SystemParams) -> Result<Self> {
        let (inc, dp) = bundle
            .brownian_increments()
            .ok_or_else(|| Error::InvalidParameter("bundle was not driven by Brownian noise".into()))?;
        if dp != params.d_prime || bundle.d != params.d {
            return Err(Error::DimensionMismatch {
                expected: params.d_prime,
                got: dp,
            });
        }
        let d = bundle.d;
        let mut out = vec![0.0; bundle.grid.n_steps() * bundle.n * d];
        for (w, o) in inc.chunks_exact(dp).zip(out.chunks_exact_mut(d)) {
            params.apply_sigma(w, o);
        }
        Ok(NoisePath {
            n: bundle.n,
            d,
            grid: bundle.grid,
            increments: out,
        })
    }

    /// Interacting forcing: `d theta_i = b_i dt + sigma dW_i`, where `b_i` is the
    /// pairwise drift minus the mean-field convolution at the left endpoint.
    pub fn interacting(
        bundle: &PathBundle,
        params: &SystemParams,
        kernel: &KernelSpec,
        cloud: Option<&ReferenceCloud>,
    ) -> Result<Self> {
        let sigma_w = Self::brownian(bundle, params)?;
        let drift = CloudDrift::new(kernel, cloud, &bundle.grid, bundle.d)?;
        let (n, d) = (bundle.n, bundle.d);
        let dt = bundle.grid.dt();
        let mut out = sigma_w.increments;
        let mut pair = vec![0.0; n * d];
        let mut conv = vec![0.0; d];
        for step in 0..bundle.grid.n_steps() {
            let x = bundle.positions_at(step);
            pairwise_field(kernel, &x, n, d, &mut pair);
            for p in 0..n {
                drift.eval_into(step, &x[p * d..(p + 1) * d], &mut conv);
                for c in 0..d {
                    let j = p * d + c;
                    out[step * n * d + j] += (pair[j] - conv[c]) * dt;
                }
            }
        }
        Ok(NoisePath {
            n,
            d,
            grid: bundle.grid,
            increments: out,
        })
    }

    pub fn increment(&self, step: usize, particle: usize) -> &[f64] {
        let o = (step * self.n + particle) * self.d;
        &self.increments[o..o + self.d]
    }

    /// `theta_i(t_step)`, with `theta_i(0) = 0`.
    pub fn cumulative(&self, step: usize, particle: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for s in 0..step {
            for (a, v) in acc.iter_mut().zip(self.increment(s, particle)) {
                *a += v;
            }
        }
        acc
    }
}
