use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConvolutionMoments, Domain, InitialLaw, KernelSpec, RngPolicy, SystemParams, TimeGrid};

use super::engine::{Feed, Field, Integrator};
use super::{ExternalDrift, Order};

const MAGIC: &[u8; 4] = b"MFCL";
const VERSION: u32 = 1;

/// How a cloud came to be.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CloudSource {
    Built {
        kernel: KernelSpec,
        params: SystemParams,
        init: InitialLaw,
        master_seed: u64,
        refine_iters: usize,
        external_drift: String,
    },
    Loaded {
        path: PathBuf,
    },
    Points,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CloudProvenance {
    pub m: usize,
    pub order: u32,
    pub d: usize,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(flatten)]
    pub source: CloudSource,
}

/// Time-indexed snapshots of a large particle cloud standing in for the mean-field law.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCloud {
    order: Order,
    d: usize,
    m: usize,
    grid: TimeGrid,
    /// `(step, particle, coords)`.
    states: Vec<f64>,
    provenance: CloudProvenance,
}

impl ReferenceCloud {
    /// Wraps externally produced snapshots, `(step, particle, coords)`.
    pub fn from_points(order: Order, d: usize, grid: TimeGrid, states: Vec<f64>) -> Result<Self> {
        Self::assemble(order, d, grid, states, CloudSource::Points)
    }

    fn assemble(order: Order, d: usize, grid: TimeGrid, states: Vec<f64>, source: CloudSource) -> Result<Self> {
        let per_step = order.coords(d);
        let rows = grid.n_steps() + 1;
        if d == 0 || states.is_empty() || states.len() % (rows * per_step) != 0 {
            return Err(Error::CloudFormat(format!(
                "{} values do not split into {rows} snapshots of {per_step}-coordinate states",
                states.len()
            )));
        }
        let m = states.len() / (rows * per_step);
        Ok(ReferenceCloud {
            order,
            d,
            m,
            grid,
            states,
            provenance: CloudProvenance {
                m,
                order: order.as_u32(),
                d,
                dt: grid.dt(),
                n_steps: grid.n_steps(),
                source,
            },
        })
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn provenance(&self) -> &CloudProvenance {
        &self.provenance
    }

    pub fn coords(&self) -> usize {
        self.order.coords(self.d)
    }

    /// All cloud states at one step, `(particle, coords)`.
    pub fn snapshot(&self, step: usize) -> &[f64] {
        let w = self.m * self.coords();
        &self.states[step * w..(step + 1) * w]
    }

    pub fn snapshot_count(&self) -> usize {
        self.grid.n_steps() + 1
    }

    /// Writes the little-endian `MFCL` dump.
    pub fn write_mfcl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.m as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.d as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&self.order.as_u32().to_le_bytes()).map_err(io)?;
        w.write_all(&(self.snapshot_count() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&self.grid.dt().to_le_bytes()).map_err(io)?;
        for v in &self.states {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_mfcl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut header = [0u8; 40];
        r.read_exact(&mut header)
            .map_err(|_| Error::CloudFormat("truncated header".into()))?;
        if &header[0..4] != MAGIC {
            return Err(Error::CloudFormat("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::CloudFormat(format!("unsupported version {version}")));
        }
        let m = u64_at(8) as usize;
        let d = u32_at(16) as usize;
        let order = Order::from_u32(u32_at(20))
            .ok_or_else(|| Error::CloudFormat(format!("order {} is not 1 or 2", u32_at(20))))?;
        let snapshots = u64_at(24) as usize;
        let dt = f64::from_le_bytes(header[32..40].try_into().unwrap());
        if snapshots < 2 || m == 0 || d == 0 {
            return Err(Error::CloudFormat("empty cloud".into()));
        }
        let grid = TimeGrid::new((snapshots - 1) as f64 * dt, dt)?;
        let count = snapshots * m * order.coords(d);
        let mut bytes = Vec::with_capacity(count * 8);
        r.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() != count * 8 {
            return Err(Error::CloudFormat(format!(
                "body holds {} bytes, header promises {}",
                bytes.len(),
                count * 8
            )));
        }
        let states = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::assemble(
            order,
            d,
            grid,
            states,
            CloudSource::Loaded {
                path: path.to_path_buf(),
            },
        )
    }
}

/// Simulates the interacting cloud, then refines it by Picard steps in which
/// the cloud is re-simulated against the frozen convolution drift of its
/// predecessor. Every iteration reuses the same initial draws and Brownian paths.
#[allow(clippy::too_many_arguments)]
pub fn build_reference_cloud(
    order: Order,
    params: &SystemParams,
    kernel: &KernelSpec,
    init: &InitialLaw,
    grid: &TimeGrid,
    m: usize,
    policy: &RngPolicy,
    refine_iters: usize,
    drift: &ExternalDrift,
) -> Result<ReferenceCloud> {
    if m < 100 {
        return Err(Error::InvalidParameter(format!("cloud size M = {m} is below 100")));
    }
    kernel.check_dim(params.d)?;
    if matches!(kernel, KernelSpec::GaussBump { .. }) && m > 2000 {
        log::warn!("GaussBump cloud with M = {m} uses the O(M^2) pairwise sum");
    }
    let d = params.d;
    let started = Instant::now();
    let sampler = init.sampler(order.coords(d))?;
    let init_states = sampler.sample(policy, Domain::CloudInit, 0, m);
    let (x0, v0) = split_states(order, &init_states, m, d);
    let feed = || Feed::Keyed {
        policy,
        domain: Domain::CloudNoise,
        realization: 0,
    };

    let integrator = Integrator {
        order,
        params,
        field: Field::SelfMoments(kernel),
        drift,
        grid,
    };
    let first = integrator.run(m, x0.clone(), v0.clone(), feed(), true, 0, None)?;
    let mut cloud = ReferenceCloud::assemble(order, d, *grid, first.states.unwrap(), CloudSource::Points)?;

    for _ in 0..refine_iters {
        let table = CloudDrift::new(kernel, Some(&cloud), grid, d)?;
        let integrator = Integrator {
            order,
            params,
            field: Field::Cloud(&table),
            drift,
            grid,
        };
        let next = integrator.run(m, x0.clone(), v0.clone(), feed(), true, 0, None)?;
        drop(table);
        cloud = ReferenceCloud::assemble(order, d, *grid, next.states.unwrap(), CloudSource::Points)?;
    }

    cloud.provenance.source = CloudSource::Built {
        kernel: kernel.clone(),
        params: params.clone(),
        init: init.clone(),
        master_seed: policy.master_seed,
        refine_iters,
        external_drift: format!("{drift:?}"),
    };
    log::info!(
        "reference cloud M={m}, {} steps, {refine_iters} refinements in {:.2?}",
        grid.n_steps(),
        started.elapsed()
    );
    Ok(cloud)
}

pub(crate) fn split_states(order: Order, states: &[f64], n: usize, d: usize) -> (Vec<f64>, Option<Vec<f64>>) {
    match order {
        Order::First => (states.to_vec(), None),
        Order::Second => {
            let mut x = Vec::with_capacity(n * d);
            let mut v = Vec::with_capacity(n * d);
            for s in states.chunks_exact(2 * d) {
                x.extend_from_slice(&s[..d]);
                v.extend_from_slice(&s[d..]);
            }
            (x, Some(v))
        }
    }
}

fn check_query(cloud: &ReferenceCloud, kernel: &KernelSpec, step: usize, x: &[f64]) -> Result<()> {
    kernel.check_dim(x.len())?;
    if x.len() != cloud.d {
        return Err(Error::DimensionMismatch {
            expected: cloud.d,
            got: x.len(),
        });
    }
    if step > cloud.grid.n_steps() {
        return Err(Error::GridMismatch(format!(
            "step {step} beyond the cloud's {} steps",
            cloud.grid.n_steps()
        )));
    }
    Ok(())
}

/// `(1/M) sum_m K(x - Y_m(t_step))` over the snapshot at `step`.
pub fn meanfield_drift(cloud: &ReferenceCloud, kernel: &KernelSpec, step: usize, x: &[f64]) -> Result<Vec<f64>> {
    check_query(cloud, kernel, step, x)?;
    let mut out = vec![0.0; x.len()];
    kernel.convolve_direct(x, cloud.snapshot(step), cloud.coords(), &mut out);
    Ok(out)
}

/// Cloud convolution together with the per-coordinate standard error of the sample mean.
pub fn meanfield_drift_with_se(
    cloud: &ReferenceCloud,
    kernel: &KernelSpec,
    step: usize,
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_query(cloud, kernel, step, x)?;
    let d = x.len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut k = vec![0.0; d];
    for y in cloud.snapshot(step).chunks_exact(cloud.coords()) {
        for c in 0..d {
            diff[c] = x[c] - y[c];
        }
        kernel.eval_into(&diff, &mut k);
        for c in 0..d {
            sum[c] += k[c];
            sum_sq[c] += k[c] * k[c];
        }
    }
    let m = cloud.m as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, mu)| ((s2 / m - mu * mu).max(0.0) * m / (m - 1.0) / m).sqrt())
        .collect();
    Ok((mean, se))
}

enum Table {
    Exact(ConvolutionMoments),
    PerStep(Vec<ConvolutionMoments>),
}

/// Per-step evaluator of `K * rho_t` for a fixed kernel.
///
/// Zero and constant kernels need no cloud. Kernels with a moment factorization
/// are tabulated once per step; the rest fall back to the direct cloud sum.
pub struct CloudDrift<'a> {
    kernel: KernelSpec,
    table: Table,
    cloud: Option<&'a ReferenceCloud>,
}

impl<'a> CloudDrift<'a> {
    pub fn new(kernel: &KernelSpec, cloud: Option<&'a ReferenceCloud>, grid: &TimeGrid, d: usize) -> Result<Self> {
        kernel.check_dim(d)?;
        match kernel {
            KernelSpec::Zero | KernelSpec::Constant { .. } => Ok(CloudDrift {
                kernel: kernel.clone(),
                table: Table::Exact(ConvolutionMoments::compute(kernel, &[0.0; 1], 1, d)),
                cloud: None,
            }),
            _ => {
                let cloud = cloud.ok_or_else(|| {
                    Error::InvalidParameter(format!("kernel {} needs a reference cloud", kernel.name()))
                })?;
                cloud.grid.ensure_same(grid)?;
                if cloud.d != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: cloud.d,
                    });
                }
                let stride = cloud.coords();
                let table = (0..cloud.snapshot_count())
                    .map(|s| ConvolutionMoments::compute(kernel, cloud.snapshot(s), stride, d))
                    .collect();
                Ok(CloudDrift {
                    kernel: kernel.clone(),
                    table: Table::PerStep(table),
                    cloud: Some(cloud),
                })
            }
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// `K * rho_{t_step}(x)` into `out`.
    #[inline]
    pub fn eval_into(&self, step: usize, x: &[f64], out: &mut [f64]) {
        let moments = match &self.table {
            Table::Exact(m) => m,
            Table::PerStep(t) => &t[step],
        };
        if !moments.eval_into(x, out) {
            let cloud = self.cloud.expect("direct evaluation keeps its cloud");
            self.kernel
                .convolve_direct(x, cloud.snapshot(step), cloud.coords(), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_gaussian_cloud(m: usize, seed: u64) -> ReferenceCloud {
        let grid = TimeGrid::new(1.0, 1.0).unwrap();
        let law = InitialLaw::isotropic_gaussian(1, 0.0, 1.0);
        let s = law.sampler(1).unwrap();
        let policy = RngPolicy::new(seed);
        let mut states = s.sample(&policy, Domain::Fuzz, 0, m);
        states.extend(s.sample(&policy, Domain::Fuzz, 1, m));
        ReferenceCloud::from_points(Order::First, 1, grid, states).unwrap()
    }

    #[test]
    fn sine_convolution_against_gaussian_cloud() {
        let cloud = standard_gaussian_cloud(1_000_000, 5);
        let k = KernelSpec::sine(1.0, 1.0).unwrap();
        let x = [std::f64::consts::FRAC_PI_2];
        let (mean, se) = meanfield_drift_with_se(&cloud, &k, 0, &x).unwrap();
        let exact = (-0.5f64).exp();
        assert!((exact - 0.606531).abs() < 1e-6);
        assert!((mean[0] - exact).abs() < 3.0 * se[0], "{} vs {exact} (se {})", mean[0], se[0]);
        let tab = CloudDrift::new(&k, Some(&cloud), cloud.grid(), 1).unwrap();
        let mut out = [0.0];
        tab.eval_into(0, &x, &mut out);
        assert!((out[0] - mean[0]).abs() < 1e-12);
    }

    #[test]
    fn trivial_kernels_ignore_the_cloud() {
        let cloud = standard_gaussian_cloud(500, 1);
        assert_eq!(meanfield_drift(&cloud, &KernelSpec::zero(), 1, &[2.0]).unwrap(), vec![0.0]);
        let c = KernelSpec::constant(vec![0.75]).unwrap();
        let got = meanfield_drift(&cloud, &c, 0, &[-3.0]).unwrap();
        assert!((got[0] - 0.75).abs() < 1e-15);
        let tab = CloudDrift::new(&c, None, cloud.grid(), 1).unwrap();
        let mut out = [0.0];
        tab.eval_into(1, &[9.0], &mut out);
        assert_eq!(out[0], 0.75);
        assert!(CloudDrift::new(&KernelSpec::sine(1.0, 1.0).unwrap(), None, cloud.grid(), 1).is_err());
        assert!(meanfield_drift(&cloud, &c, 2, &[0.0]).is_err());
        assert!(meanfield_drift(&cloud, &c, 0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn mfcl_roundtrip_is_bit_exact() {
        let grid = TimeGrid::new(0.5, 0.25).unwrap();
        let states: Vec<f64> = (0..3 * 7 * 4).map(|i| (i as f64).sin() * 1e-3 + i as f64).collect();
        let cloud = ReferenceCloud::from_points(Order::Second, 2, grid, states).unwrap();
        assert_eq!(cloud.size(), 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mfcl");
        cloud.write_mfcl(&path).unwrap();
        let back = ReferenceCloud::read_mfcl(&path).unwrap();
        assert_eq!(back.states, cloud.states);
        assert_eq!(back.order(), Order::Second);
        assert!(back.grid().same_as(cloud.grid()));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MFCL");
        assert_eq!(bytes.len(), 40 + 3 * 7 * 4 * 8);
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(ReferenceCloud::read_mfcl(&path), Err(Error::CloudFormat(_))));
    }
}
