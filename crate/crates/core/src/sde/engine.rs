use crate::error::{Error, Result};
use crate::model::{ConvolutionMoments, Domain, GaussianStream, KernelSpec, RngPolicy, SystemParams, TimeGrid};

use super::cloud::CloudDrift;
use super::{ExternalDrift, Order};

/// `out_i = (1/(N-1)) sum_{j != i} K(x_i - x_j)`, summed in ascending `j`.
///
/// Odd kernels evaluate each unordered pair once and hand the negated value to
/// the partner; since `K(-y) = -K(y)` holds bitwise for them the accumulation
/// order, and hence every bit of the result, matches the direct double loop.
pub fn pairwise_field(kernel: &KernelSpec, x: &[f64], n: usize, d: usize, out: &mut [f64]) {
    let mut diff = vec![0.0; d];
    let mut k = vec![0.0; d];
    pairwise_field_with(kernel, x, n, d, out, &mut diff, &mut k);
}

pub(crate) fn pairwise_field_with(
    kernel: &KernelSpec,
    x: &[f64],
    n: usize,
    d: usize,
    out: &mut [f64],
    diff: &mut [f64],
    k: &mut [f64],
) {
    out[..n * d].iter_mut().for_each(|o| *o = 0.0);
    match kernel {
        KernelSpec::Zero => return,
        KernelSpec::Constant { .. } => {
            for i in 0..n {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    for c in 0..d {
                        diff[c] = x[i * d + c] - x[j * d + c];
                    }
                    kernel.eval_into(diff, k);
                    for c in 0..d {
                        out[i * d + c] += k[c];
                    }
                }
            }
        }
        _ => {
            for i in 0..n {
                for j in i + 1..n {
                    for c in 0..d {
                        diff[c] = x[i * d + c] - x[j * d + c];
                    }
                    kernel.eval_into(diff, k);
                    for c in 0..d {
                        out[i * d + c] += k[c];
                        out[j * d + c] -= k[c];
                    }
                }
            }
        }
    }
    let denom = (n - 1) as f64;
    out[..n * d].iter_mut().for_each(|o| *o /= denom);
}

/// Source of the interaction drift at each step.
pub(crate) enum Field<'a> {
    /// Empirical pairwise average over the other particles.
    Pairwise(&'a KernelSpec),
    /// Same quantity for a large cloud, evaluated through the ensemble's moments
    /// as `(M K*mu(x_i) - K(0)) / (M - 1)` when the kernel allows it.
    SelfMoments(&'a KernelSpec),
    /// Frozen mean-field convolution.
    Cloud(&'a CloudDrift<'a>),
}

/// Where the stochastic forcing comes from.
pub(crate) enum Feed<'a> {
    Keyed {
        policy: &'a RngPolicy,
        domain: Domain,
        realization: u64,
    },
    /// Explicit Brownian increments, `(step, particle, d')`.
    Brownian(&'a [f64]),
    /// Explicit forcing increments replacing `sigma dW`, `(step, particle, d)`.
    Driving(&'a [f64]),
}

/// Called once per step, before the update, with the left-endpoint state.
pub trait StepObserver {
    /// `dw` is `None` only when the run is driven by forcing increments.
    fn observe(
        &mut self,
        step: usize,
        x: &[f64],
        v: Option<&[f64]>,
        field: &[f64],
        dw: Option<&[f64]>,
    ) -> Result<()>;
}

pub(crate) struct Integrator<'a> {
    pub order: Order,
    pub params: &'a SystemParams,
    pub field: Field<'a>,
    pub drift: &'a ExternalDrift,
    pub grid: &'a TimeGrid,
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub v: Option<Vec<f64>>,
    /// `(step, particle, coords)` with `coords = x` or `(x, v)`.
    pub states: Option<Vec<f64>>,
    pub increments: Option<Vec<f64>>,
}

impl Integrator<'_> {
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        n: usize,
        mut x: Vec<f64>,
        mut v: Option<Vec<f64>>,
        feed: Feed<'_>,
        record: bool,
        realization: u64,
        mut observer: Option<&mut dyn StepObserver>,
    ) -> Result<Outcome> {
        let d = self.params.d;
        let dp = self.params.d_prime;
        let steps = self.grid.n_steps();
        let dt = self.grid.dt();
        let sqrt_dt = dt.sqrt();
        if n < 2 {
            return Err(Error::TooFewParticles(n));
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
        match (self.order, &v) {
            (Order::Second, Some(v0)) if v0.len() == n * d => {}
            (Order::Second, _) => return Err(Error::ShapeMismatch("second-order run needs n*d velocities".into())),
            (Order::First, None) => {}
            (Order::First, Some(_)) => return Err(Error::ShapeMismatch("first-order run takes no velocities".into())),
        }
        match &feed {
            Feed::Brownian(w) if w.len() != steps * n * dp => {
                return Err(Error::ShapeMismatch(format!(
                    "expected {} Brownian increments, got {}",
                    steps * n * dp,
                    w.len()
                )))
            }
            Feed::Driving(w) if w.len() != steps * n * d => {
                return Err(Error::ShapeMismatch(format!(
                    "expected {} forcing increments, got {}",
                    steps * n * d,
                    w.len()
                )))
            }
            _ => {}
        }

        let coords = self.order.coords(d);
        let mut states = record.then(|| Vec::with_capacity((steps + 1) * n * coords));
        let keep_increments = record && !matches!(feed, Feed::Driving(_));
        let mut increments = keep_increments.then(|| Vec::with_capacity(steps * n * dp));
        let mut streams: Vec<GaussianStream> = match &feed {
            Feed::Keyed {
                policy,
                domain,
                realization,
            } => (0..n as u64).map(|p| policy.gaussian(*domain, *realization, p)).collect(),
            _ => Vec::new(),
        };

        let mut field = vec![0.0; n * d];
        let mut dw = vec![0.0; n * dp];
        let mut noise = vec![0.0; n * d];
        let mut ext = vec![0.0; d];
        let mut diff = vec![0.0; d];
        let mut kbuf = vec![0.0; d];
        let mut conv = vec![0.0; d];
        let k0 = match &self.field {
            Field::SelfMoments(k) => {
                let mut out = vec![0.0; d];
                k.eval_into(&vec![0.0; d], &mut out);
                out
            }
            _ => Vec::new(),
        };

        if let Some(s) = states.as_mut() {
            push_states(s, &x, v.as_deref(), n, d);
        }

        for step in 0..steps {
            // interaction drift at the left endpoint
            match &self.field {
                Field::Pairwise(k) => pairwise_field_with(k, &x, n, d, &mut field, &mut diff, &mut kbuf),
                Field::SelfMoments(k) => {
                    let moments = ConvolutionMoments::compute(k, &x, d, d);
                    if let ConvolutionMoments::Direct = moments {
                        pairwise_field_with(k, &x, n, d, &mut field, &mut diff, &mut kbuf);
                    } else {
                        let m = n as f64;
                        let denom = (n - 1) as f64;
                        for i in 0..n {
                            moments.eval_into(&x[i * d..(i + 1) * d], &mut conv);
                            for c in 0..d {
                                field[i * d + c] = (m * conv[c] - k0[c]) / denom;
                            }
                        }
                    }
                }
                Field::Cloud(cd) => {
                    for i in 0..n {
                        cd.eval_into(step, &x[i * d..(i + 1) * d], &mut field[i * d..(i + 1) * d]);
                    }
                }
            }

            // forcing increments
            match &feed {
                Feed::Keyed { .. } => {
                    for (p, g) in streams.iter_mut().enumerate() {
                        g.fill_block(&mut dw[p * dp..(p + 1) * dp], sqrt_dt);
                    }
                }
                Feed::Brownian(w) => dw.copy_from_slice(&w[step * n * dp..(step + 1) * n * dp]),
                Feed::Driving(w) => noise.copy_from_slice(&w[step * n * d..(step + 1) * n * d]),
            }
            let brownian = !matches!(feed, Feed::Driving(_));
            if brownian {
                for p in 0..n {
                    self.params
                        .apply_sigma(&dw[p * dp..(p + 1) * dp], &mut noise[p * d..(p + 1) * d]);
                }
                if let Some(inc) = increments.as_mut() {
                    inc.extend_from_slice(&dw);
                }
            }

            if let Some(obs) = observer.as_deref_mut() {
                obs.observe(step, &x, v.as_deref(), &field, brownian.then_some(&dw[..]))?;
            }

            match self.order {
                Order::First => {
                    for p in 0..n {
                        let xi = &mut x[p * d..(p + 1) * d];
                        self.drift.eval_into(xi, &mut ext);
                        for c in 0..d {
                            xi[c] = step_first(xi[c], ext[c], field[p * d + c], noise[p * d + c], dt);
                        }
                    }
                }
                Order::Second => {
                    let vv = v.as_mut().expect("velocities present for second order");
                    let (m, gamma) = (self.params.mass, self.params.gamma);
                    for j in 0..n * d {
                        let (xn, vn) = step_second(x[j], vv[j], field[j], noise[j], dt, m, gamma);
                        x[j] = xn;
                        vv[j] = vn;
                    }
                }
            }

            if x.iter().chain(v.iter().flatten()).any(|s| !s.is_finite()) {
                return Err(Error::NumericalBlowup {
                    step: step + 1,
                    realization,
                });
            }
            if let Some(s) = states.as_mut() {
                push_states(s, &x, v.as_deref(), n, d);
            }
        }

        Ok(Outcome {
            x,
            v,
            states,
            increments,
        })
    }
}

/// `x + (b(x) + F) dt + noise`.
#[inline(always)]
pub(crate) fn step_first(x: f64, ext: f64, field: f64, noise: f64, dt: f64) -> f64 {
    x + (ext + field) * dt + noise
}

/// `x + v dt`, `v + ((F - gamma v) dt + noise) / m`.
#[inline(always)]
pub(crate) fn step_second(x: f64, v: f64, field: f64, noise: f64, dt: f64, m: f64, gamma: f64) -> (f64, f64) {
    (x + v * dt, v + ((field - gamma * v) * dt + noise) / m)
}

fn push_states(out: &mut Vec<f64>, x: &[f64], v: Option<&[f64]>, n: usize, d: usize) {
    match v {
        None => out.extend_from_slice(x),
        Some(v) => {
            for p in 0..n {
                out.extend_from_slice(&x[p * d..(p + 1) * d]);
                out.extend_from_slice(&v[p * d..(p + 1) * d]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(kernel: &KernelSpec, x: &[f64], n: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let mut acc = vec![0.0; d];
            for j in 0..n {
                if j != i {
                    let diff: Vec<f64> = (0..d).map(|c| x[i * d + c] - x[j * d + c]).collect();
                    let k = crate::model::kernel_eval(kernel, &diff).unwrap();
                    for c in 0..d {
                        acc[c] += k[c];
                    }
                }
            }
            for c in 0..d {
                out[i * d + c] = acc[c] / (n - 1) as f64;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn pair_symmetry_is_bit_exact(xs in prop::collection::vec(-5.0f64..5.0, 2..24), two_d in any::<bool>()) {
            let d = if two_d && xs.len() % 2 == 0 { 2 } else { 1 };
            let n = xs.len() / d;
            prop_assume!(n >= 2);
            for k in [
                KernelSpec::sine(1.3, 0.7).unwrap(),
                KernelSpec::gauss_bump(2.0).unwrap(),
                KernelSpec::Linear { a: 0.5 },
                KernelSpec::Constant { c: vec![0.25; d] },
            ] {
                let mut fast = vec![0.0; n * d];
                pairwise_field(&k, &xs[..n * d], n, d, &mut fast);
                prop_assert_eq!(fast, naive(&k, &xs[..n * d], n, d));
            }
        }
    }
}
