use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{SystemParams, TimeGrid};
use crate::sde::Order;
use crate::stats::sig17;

use super::{exact_joint_kl, exact_marginal_kl, ExchangeableGaussian, MeanFieldState};

/// RK4 substeps per grid step.
pub const RK_SUBSTEPS: usize = 10;

/// Linear drift data of the one-dimensional system with `K(x) = -a x`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSystem {
    pub a: f64,
    pub order: Order,
    pub lambda: f64,
    pub mass: f64,
    pub gamma: f64,
}

impl OracleSystem {
    pub fn new(a: f64, params: &SystemParams, order: Order) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidParameter(format!("oracle slope must satisfy a >= 0, got {a}")));
        }
        if params.d != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: params.d,
            });
        }
        Ok(OracleSystem {
            a,
            order,
            lambda: params.lambda_mat[(0, 0)],
            mass: params.mass,
            gamma: params.gamma,
        })
    }

    pub fn block(&self) -> usize {
        self.order.coords(1)
    }

    /// Drift block acting on a particle's own state.
    fn self_block(&self) -> DMatrix<f64> {
        match self.order {
            Order::First => DMatrix::from_element(1, 1, -self.a),
            Order::Second => DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, -self.a / self.mass, -self.gamma / self.mass],
            ),
        }
    }

    /// Drift block acting on each other particle's state.
    fn cross_block(&self, n: usize) -> DMatrix<f64> {
        let w = self.a / (n - 1) as f64;
        match self.order {
            Order::First => DMatrix::from_element(1, 1, w),
            Order::Second => DMatrix::from_row_slice(2, 2, &[0.0, 0.0, w / self.mass, 0.0]),
        }
    }

    fn noise_block(&self) -> DMatrix<f64> {
        match self.order {
            Order::First => DMatrix::from_element(1, 1, self.lambda),
            Order::Second => {
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, self.lambda / (self.mass * self.mass)])
            }
        }
    }

    fn check_block(&self, b: usize) -> Result<()> {
        if b != self.block() {
            return Err(Error::DimensionMismatch {
                expected: self.block(),
                got: b,
            });
        }
        Ok(())
    }
}

fn rk4<S: Clone>(
    state: &S,
    h: f64,
    f: impl Fn(&S) -> S,
    axpy: impl Fn(&S, f64, &S) -> S,
) -> S {
    let k1 = f(state);
    let k2 = f(&axpy(state, 0.5 * h, &k1));
    let k3 = f(&axpy(state, 0.5 * h, &k2));
    let k4 = f(&axpy(state, h, &k3));
    let mut out = axpy(state, h / 6.0, &k1);
    out = axpy(&out, h / 3.0, &k2);
    out = axpy(&out, h / 3.0, &k3);
    axpy(&out, h / 6.0, &k4)
}

type Pair = (DMatrix<f64>, DMatrix<f64>);

fn pair_axpy(x: &Pair, h: f64, k: &Pair) -> Pair {
    (&x.0 + &k.0 * h, &x.1 + &k.1 * h)
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleTrajectory {
    pub system: OracleSystem,
    pub grid: TimeGrid,
    /// State at every grid time `0..=n_steps`.
    pub states: Vec<ExchangeableGaussian>,
}

impl OracleTrajectory {
    pub fn at(&self, t: f64) -> Result<&ExchangeableGaussian> {
        Ok(&self.states[self.grid.step_of(t)?])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanFieldTrajectory {
    pub system: OracleSystem,
    pub grid: TimeGrid,
    pub states: Vec<MeanFieldState>,
}

impl MeanFieldTrajectory {
    pub fn at(&self, t: f64) -> Result<&MeanFieldState> {
        Ok(&self.states[self.grid.step_of(t)?])
    }
}

/// Exchangeable covariance of the interacting linear system, by RK4 on the
/// reduced `(s, c)` Lyapunov equations at `dt / RK_SUBSTEPS`:
/// `s' = M_s + M_s^T + Q`, `M_s = B s + (N-1) B_x c`;
/// `c' = M_c + M_c^T`, `M_c = B c + B_x (s + (N-2) c)`.
pub fn propagate_interacting(
    system: &OracleSystem,
    init: &ExchangeableGaussian,
    grid: &TimeGrid,
) -> Result<OracleTrajectory> {
    let n = init.n;
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    system.check_block(init.block())?;
    init.validate()?;
    let b_self = system.self_block();
    let b_cross = system.cross_block(n);
    let q = system.noise_block();
    let nf = n as f64;
    let rhs = |(s, c): &Pair| -> Pair {
        let ms = &b_self * s + &b_cross * c * (nf - 1.0);
        let mc = &b_self * c + &b_cross * (s + c * (nf - 2.0));
        (&ms + ms.transpose() + &q, &mc + mc.transpose())
    };
    let h = grid.dt() / RK_SUBSTEPS as f64;
    let mut state: Pair = (init.s.clone(), init.c.clone());
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(init.clone());
    for step in 1..=grid.n_steps() {
        for _ in 0..RK_SUBSTEPS {
            state = rk4(&state, h, rhs, pair_axpy);
        }
        let g = ExchangeableGaussian {
            n,
            mean: init.mean.clone(),
            s: state.0.clone(),
            c: state.1.clone(),
        };
        if g.validate().is_err() {
            return Err(Error::OraclePdFailure { time: grid.time(step) });
        }
        states.push(g);
    }
    Ok(OracleTrajectory {
        system: system.clone(),
        grid: *grid,
        states,
    })
}

/// Mean-field covariance `s_bar' = B s_bar + s_bar B^T + Q`; the mean is constant.
pub fn propagate_meanfield(system: &OracleSystem, init: &MeanFieldState, grid: &TimeGrid) -> Result<MeanFieldTrajectory> {
    system.check_block(init.block())?;
    let b = system.self_block();
    let q = system.noise_block();
    let rhs = |s: &DMatrix<f64>| {
        let m = &b * s;
        &m + m.transpose() + &q
    };
    let axpy = |x: &DMatrix<f64>, h: f64, k: &DMatrix<f64>| x + k * h;
    let h = grid.dt() / RK_SUBSTEPS as f64;
    let mut s = init.s.clone();
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(init.clone());
    for _ in 1..=grid.n_steps() {
        for _ in 0..RK_SUBSTEPS {
            s = rk4(&s, h, rhs, axpy);
        }
        states.push(MeanFieldState {
            mean: init.mean.clone(),
            s: s.clone(),
        });
    }
    Ok(MeanFieldTrajectory {
        system: system.clone(),
        grid: *grid,
        states,
    })
}

/// `s_bar(t) = lambda/(2a) + (s_bar(0) - lambda/(2a)) e^{-2at}` (first order).
pub fn meanfield_closed_form(a: f64, lambda: f64, s0: f64, t: f64) -> f64 {
    if a == 0.0 {
        return s0 + lambda * t;
    }
    let stat = lambda / (2.0 * a);
    stat + (s0 - stat) * (-2.0 * a * t).exp()
}

/// Dense `(N b) x (N b)` Lyapunov integration of the full interacting system,
/// used to validate the exchangeable reduction.
pub fn propagate_dense_lyapunov(
    system: &OracleSystem,
    n: usize,
    init_cov: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<Vec<DMatrix<f64>>> {
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    let b = system.block();
    if init_cov.shape() != (n * b, n * b) {
        return Err(Error::ShapeMismatch(format!("dense covariance must be {0}x{0}", n * b)));
    }
    let b_self = system.self_block();
    let b_cross = system.cross_block(n);
    let q_blk = system.noise_block();
    let mut a = DMatrix::zeros(n * b, n * b);
    let mut q = DMatrix::zeros(n * b, n * b);
    for i in 0..n {
        q.view_mut((i * b, i * b), (b, b)).copy_from(&q_blk);
        for j in 0..n {
            let blk = if i == j { &b_self } else { &b_cross };
            a.view_mut((i * b, j * b), (b, b)).copy_from(blk);
        }
    }
    let rhs = |s: &DMatrix<f64>| {
        let m = &a * s;
        &m + m.transpose() + &q
    };
    let axpy = |x: &DMatrix<f64>, h: f64, k: &DMatrix<f64>| x + k * h;
    let h = grid.dt() / RK_SUBSTEPS as f64;
    let mut cov = init_cov.clone();
    let mut out = Vec::with_capacity(grid.n_steps() + 1);
    out.push(cov.clone());
    for _ in 1..=grid.n_steps() {
        for _ in 0..RK_SUBSTEPS {
            cov = rk4(&cov, h, rhs, axpy);
        }
        out.push(cov.clone());
    }
    Ok(out)
}

/// Writes `t, s, c, s_bar, kl_joint, kl_marginal_1` (position entries of the blocks).
pub fn write_trajectory_csv(
    path: impl AsRef<Path>,
    interacting: &OracleTrajectory,
    meanfield: &MeanFieldTrajectory,
) -> Result<()> {
    let path = path.as_ref();
    interacting.grid.ensure_same(&meanfield.grid)?;
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "t,s,c,s_bar,kl_joint,kl_marginal_1").map_err(io)?;
    for (step, (p, r)) in interacting.states.iter().zip(&meanfield.states).enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            sig17(interacting.grid.time(step)),
            sig17(p.s[(0, 0)]),
            sig17(p.c[(0, 0)]),
            sig17(r.s[(0, 0)]),
            sig17(exact_joint_kl(p, r)?),
            sig17(exact_marginal_kl(p, 1, r)?),
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_joint_kl;
    use nalgebra::DVector;

    fn first(a: f64) -> OracleSystem {
        OracleSystem::new(a, &SystemParams::isotropic(1, 1.0, 1.0, 0.0).unwrap(), Order::First).unwrap()
    }

    /// First order splits into the difference mode `q = s - c`, relaxing to
    /// `lambda (N-1)/(2aN)` at rate `2aN/(N-1)`, and the centre-of-mass mode
    /// `p = s + (N-1) c`, which diffuses freely: `p(t) = p(0) + lambda t`.
    fn modes(a: f64, lambda: f64, n: usize, s0: f64, c0: f64, t: f64) -> (f64, f64) {
        let nf = n as f64;
        let q_inf = lambda * (nf - 1.0) / (2.0 * a * nf);
        let q = q_inf + (s0 - c0 - q_inf) * (-2.0 * a * nf / (nf - 1.0) * t).exp();
        let p = s0 + (nf - 1.0) * c0 + lambda * t;
        ((p + (nf - 1.0) * q) / nf, (p - q) / nf)
    }

    #[test]
    fn first_order_matches_mode_solution() {
        let grid = TimeGrid::new(2.0, 0.01).unwrap();
        for n in [2, 3, 16] {
            let init = ExchangeableGaussian::scalar(n, 0.0, 1.0, 0.0).unwrap();
            let traj = propagate_interacting(&first(0.5), &init, &grid).unwrap();
            for step in [0, 37, 100, 200] {
                let (s, c) = modes(0.5, 1.0, n, 1.0, 0.0, grid.time(step));
                let g = &traj.states[step];
                assert!((g.s[(0, 0)] - s).abs() < 1e-11, "n={n} step={step}");
                assert!((g.c[(0, 0)] - c).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn two_particle_stationary_difference_mode() {
        // s' = -s + c + 1 and c' = s - c: no fixed point for (s, c) since
        // s + c grows like t, but s - c settles at lambda (N-1)/(2aN) = 1/2
        let grid = TimeGrid::new(30.0, 0.01).unwrap();
        let init = ExchangeableGaussian::scalar(2, 0.0, 1.0, 0.0).unwrap();
        let traj = propagate_interacting(&first(0.5), &init, &grid).unwrap();
        let end = traj.states.last().unwrap();
        assert!((end.s[(0, 0)] - end.c[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((end.s[(0, 0)] + end.c[(0, 0)] - 31.0).abs() < 1e-9);
        let (diff, sum) = end.eigen_blocks();
        assert!(diff[(0, 0)] > 0.0 && sum[(0, 0)] > 0.0);
    }

    #[test]
    fn zero_slope_decouples() {
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let init = ExchangeableGaussian::scalar(4, 0.0, 1.5, 0.25).unwrap();
        let traj = propagate_interacting(&first(0.0), &init, &grid).unwrap();
        for (k, g) in traj.states.iter().enumerate() {
            assert!((g.s[(0, 0)] - (1.5 + grid.time(k))).abs() < 1e-13);
            assert!((g.c[(0, 0)] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn meanfield_rk_matches_closed_form() {
        let grid = TimeGrid::new(3.0, 0.001).unwrap();
        for s0 in [0.3, 1.0, 2.0] {
            let traj = propagate_meanfield(&first(0.5), &MeanFieldState::scalar(0.0, s0).unwrap(), &grid).unwrap();
            for (k, st) in traj.states.iter().enumerate() {
                assert!((st.s[(0, 0)] - meanfield_closed_form(0.5, 1.0, s0, grid.time(k))).abs() < 1e-9);
            }
        }
        let traj = propagate_meanfield(&first(0.5), &MeanFieldState::scalar(0.0, 2.0).unwrap(), &grid).unwrap();
        assert!((traj.at(1.0).unwrap().s[(0, 0)] - (1.0 + (-1.0f64).exp())).abs() < 1e-9);
        assert!((traj.at(1.0).unwrap().s[(0, 0)] - 1.367879).abs() < 1e-6);
        let flat = propagate_meanfield(&first(0.5), &MeanFieldState::scalar(0.0, 1.0).unwrap(), &grid).unwrap();
        assert!(flat.states.iter().all(|s| (s.s[(0, 0)] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn second_order_reduction_matches_dense_lyapunov() {
        let params = SystemParams::isotropic(1, 0.8, 2.0, 1.5).unwrap();
        let sys = OracleSystem::new(0.7, &params, Order::Second).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.5]);
        let c = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, -0.02]);
        let init = ExchangeableGaussian::new(3, DVector::zeros(2), s, c).unwrap();
        let grid = TimeGrid::new(2.0, 0.01).unwrap();
        let reduced = propagate_interacting(&sys, &init, &grid).unwrap();
        let dense = propagate_dense_lyapunov(&sys, 3, &init.full_covariance(), &grid).unwrap();
        for (r, d) in reduced.states.iter().zip(&dense) {
            assert!((r.full_covariance() - d).abs().max() < 1e-12);
        }
        let mf = propagate_meanfield(&sys, &MeanFieldState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap(), &grid)
            .unwrap();
        let end = reduced.states.last().unwrap();
        let r = mf.states.last().unwrap();
        assert!((exact_joint_kl(end, r).unwrap() - dense_joint_kl(end, r).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn first_order_reduction_matches_dense_lyapunov() {
        let sys = first(0.5);
        let init = ExchangeableGaussian::scalar(3, 0.0, 1.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 0.001).unwrap();
        let reduced = propagate_interacting(&sys, &init, &grid).unwrap();
        let dense = propagate_dense_lyapunov(&sys, 3, &init.full_covariance(), &grid).unwrap();
        assert!((reduced.states.last().unwrap().full_covariance() - dense.last().unwrap()).abs().max() < 1e-12);
    }

    #[test]
    fn csv_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.csv");
        let grid = TimeGrid::new(0.5, 0.1).unwrap();
        let sys = first(0.5);
        let it = propagate_interacting(&sys, &ExchangeableGaussian::scalar(4, 0.0, 1.0, 0.0).unwrap(), &grid).unwrap();
        let mf = propagate_meanfield(&sys, &MeanFieldState::scalar(0.0, 1.0).unwrap(), &grid).unwrap();
        write_trajectory_csv(&path, &it, &mf).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,s,c,s_bar,kl_joint,kl_marginal_1");
        assert_eq!(lines.len(), 7);
        let first_row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first_row, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = SystemParams::isotropic(1, 1.0, 1.0, 0.0).unwrap();
        assert!(OracleSystem::new(-0.1, &p, Order::First).is_err());
        assert!(OracleSystem::new(0.5, &SystemParams::isotropic(2, 1.0, 1.0, 0.0).unwrap(), Order::First).is_err());
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let blocky = ExchangeableGaussian::product(3, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(propagate_interacting(&first(0.5), &blocky, &grid).is_err());
    }
}
