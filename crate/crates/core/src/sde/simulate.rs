use crate::error::{Error, Result};
use crate::model::{Domain, InitialLaw, InitialSampler, KernelSpec, RngPolicy, SystemParams, TimeGrid};

use super::cloud::{split_states, CloudDrift, ReferenceCloud};
use super::engine::{Feed, Field, Integrator, Outcome, StepObserver};
use super::path::{NoisePath, NoiseRecord, PathBundle};
use super::{ExternalDrift, Order};

/// Initial positions (and velocities) of all particles, `(particle, d)` each.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub x: Vec<f64>,
    pub v: Option<Vec<f64>>,
}

impl InitialState {
    pub fn from_bundle(bundle: &PathBundle) -> Self {
        InitialState {
            x: bundle.positions_at(0),
            v: bundle.velocities_at(0),
        }
    }
}

/// Everything needed to simulate one realization of either system.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub order: Order,
    pub params: SystemParams,
    pub kernel: KernelSpec,
    pub init: InitialLaw,
    pub grid: TimeGrid,
    pub n: usize,
    pub policy: RngPolicy,
    pub drift: ExternalDrift,
    sampler: InitialSampler,
}

impl Scenario {
    pub fn new(
        order: Order,
        params: SystemParams,
        kernel: KernelSpec,
        init: InitialLaw,
        grid: TimeGrid,
        n: usize,
        policy: RngPolicy,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewParticles(n));
        }
        kernel.check_dim(params.d)?;
        let sampler = init.sampler(order.coords(params.d))?;
        Ok(Scenario {
            order,
            params,
            kernel,
            init,
            grid,
            n,
            policy,
            drift: ExternalDrift::None,
            sampler,
        })
    }

    pub fn with_drift(mut self, drift: ExternalDrift) -> Result<Self> {
        if self.order == Order::Second && !drift.is_none() {
            return Err(Error::InvalidParameter("external drift applies to first-order systems only".into()));
        }
        self.drift = drift;
        Ok(self)
    }

    /// Chaotic initial data: every particle drawn i.i.d. from the initial law.
    pub fn initial_state(&self, realization: u64) -> InitialState {
        let states = self.sampler.sample(&self.policy, Domain::Init, realization, self.n);
        let (x, v) = split_states(self.order, &states, self.n, self.params.d);
        InitialState { x, v }
    }

    fn integrator<'a>(&'a self, field: Field<'a>) -> Integrator<'a> {
        Integrator {
            order: self.order,
            params: &self.params,
            field,
            drift: &self.drift,
            grid: &self.grid,
        }
    }

    fn bundle(&self, out: Outcome, realization: u64, noise: NoiseRecord) -> PathBundle {
        PathBundle {
            order: self.order,
            n: self.n,
            d: self.params.d,
            grid: self.grid,
            realization,
            states: out.states.expect("recorded run"),
            noise,
        }
    }

    fn keyed(&self, realization: u64) -> Feed<'_> {
        Feed::Keyed {
            policy: &self.policy,
            domain: Domain::Noise,
            realization,
        }
    }

    /// Interacting run without storing the path; the observer sees every step.
    /// Returns the terminal positions and velocities.
    pub fn run_interacting(
        &self,
        realization: u64,
        observer: Option<&mut dyn StepObserver>,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let s0 = self.initial_state(realization);
        let out = self.integrator(Field::Pairwise(&self.kernel)).run(
            self.n,
            s0.x,
            s0.v,
            self.keyed(realization),
            false,
            realization,
            observer,
        )?;
        Ok((out.x, out.v))
    }

    /// Mean-field-driven run on the same keyed noise as [`Scenario::run_interacting`].
    pub fn run_meanfield(
        &self,
        drift: &CloudDrift<'_>,
        realization: u64,
        observer: Option<&mut dyn StepObserver>,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let s0 = self.initial_state(realization);
        let out = self.integrator(Field::Cloud(drift)).run(
            self.n,
            s0.x,
            s0.v,
            self.keyed(realization),
            false,
            realization,
            observer,
        )?;
        Ok((out.x, out.v))
    }

    pub fn cloud_drift<'a>(&self, cloud: Option<&'a ReferenceCloud>) -> Result<CloudDrift<'a>> {
        if let Some(c) = cloud {
            if c.order() != self.order {
                return Err(Error::InvalidParameter("cloud order differs from the scenario".into()));
            }
        }
        CloudDrift::new(&self.kernel, cloud, &self.grid, self.params.d)
    }
}

/// Full interacting path for one realization.
pub fn simulate_interacting(scn: &Scenario, realization: u64) -> Result<PathBundle> {
    let s0 = scn.initial_state(realization);
    let out = scn.integrator(Field::Pairwise(&scn.kernel)).run(
        scn.n,
        s0.x,
        s0.v,
        scn.keyed(realization),
        true,
        realization,
        None,
    )?;
    let increments = out.increments.clone().expect("recorded increments");
    Ok(scn.bundle(
        out,
        realization,
        NoiseRecord::Brownian {
            d_prime: scn.params.d_prime,
            increments,
        },
    ))
}

/// Interacting path driven by explicitly supplied Brownian increments `(step, particle, d')`.
pub fn simulate_interacting_with_increments(
    scn: &Scenario,
    start: &InitialState,
    increments: &[f64],
) -> Result<PathBundle> {
    let out = scn.integrator(Field::Pairwise(&scn.kernel)).run(
        scn.n,
        start.x.clone(),
        start.v.clone(),
        Feed::Brownian(increments),
        true,
        0,
        None,
    )?;
    Ok(scn.bundle(
        out,
        0,
        NoiseRecord::Brownian {
            d_prime: scn.params.d_prime,
            increments: increments.to_vec(),
        },
    ))
}

/// First-order interacting system with optional confinement `b`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_interacting_1st(
    params: &SystemParams,
    kernel: &KernelSpec,
    drift: ExternalDrift,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    policy: &RngPolicy,
    realization: u64,
) -> Result<PathBundle> {
    let scn = Scenario::new(Order::First, params.clone(), kernel.clone(), init.clone(), *grid, n, *policy)?
        .with_drift(drift)?;
    simulate_interacting(&scn, realization)
}

/// Second-order (kinetic) interacting system.
pub fn simulate_interacting_2nd(
    params: &SystemParams,
    kernel: &KernelSpec,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    policy: &RngPolicy,
    realization: u64,
) -> Result<PathBundle> {
    let scn = Scenario::new(Order::Second, params.clone(), kernel.clone(), init.clone(), *grid, n, *policy)?;
    simulate_interacting(&scn, realization)
}

/// Each particle feels the frozen mean-field convolution instead of its
/// neighbours; initial data and Brownian increments coincide with the
/// interacting run of the same realization.
pub fn simulate_meanfield_driven(scn: &Scenario, cloud: Option<&ReferenceCloud>, realization: u64) -> Result<PathBundle> {
    let drift = scn.cloud_drift(cloud)?;
    let s0 = scn.initial_state(realization);
    let out = scn.integrator(Field::Cloud(&drift)).run(
        scn.n,
        s0.x,
        s0.v,
        scn.keyed(realization),
        true,
        realization,
        None,
    )?;
    let increments = out.increments.clone().expect("recorded increments");
    Ok(scn.bundle(
        out,
        realization,
        NoiseRecord::Brownian {
            d_prime: scn.params.d_prime,
            increments,
        },
    ))
}

/// The solution map: integrates the mean-field-driven recursion with `sigma dW`
/// replaced by the increments of `theta`.
#[allow(clippy::too_many_arguments)]
pub fn solution_map_phi(
    theta: &NoisePath,
    order: Order,
    params: &SystemParams,
    kernel: &KernelSpec,
    cloud: Option<&ReferenceCloud>,
    drift: &ExternalDrift,
    start: &InitialState,
) -> Result<PathBundle> {
    if theta.d != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: theta.d,
        });
    }
    if let Some(c) = cloud {
        c.grid().ensure_same(&theta.grid)?;
    }
    let table = CloudDrift::new(kernel, cloud, &theta.grid, params.d)?;
    let integrator = Integrator {
        order,
        params,
        field: Field::Cloud(&table),
        drift,
        grid: &theta.grid,
    };
    let out = integrator.run(
        theta.n,
        start.x.clone(),
        start.v.clone(),
        Feed::Driving(&theta.increments),
        true,
        0,
        None,
    )?;
    Ok(PathBundle {
        order,
        n: theta.n,
        d: params.d,
        grid: theta.grid,
        realization: 0,
        states: out.states.expect("recorded run"),
        noise: NoiseRecord::Driving {
            increments: theta.increments.clone(),
        },
    })
}
