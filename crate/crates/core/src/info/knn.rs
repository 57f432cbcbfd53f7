use std::num::NonZero;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;

use crate::error::{Error, Result};

/// Smallest sample count accepted on either side.
pub const KNN_MIN_SAMPLES: usize = 50;
/// Highest dimension for which the estimator is offered.
pub const KNN_MAX_DIM: usize = 4;
/// Floor applied to coincident-point distances.
pub const KNN_DIST_FLOOR: f64 = 1e-12;

/// Nearest-neighbour KL estimate from `n` samples of `P` and `m` of `Q`,
/// both flattened `(sample, d)`:
/// `(d/n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))`.
pub fn knn_kl_estimate(samples_p: &[f64], samples_q: &[f64], d: usize, k: usize) -> Result<f64> {
    if d == 0 || d > KNN_MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "k-NN KL is restricted to 1 <= d <= {KNN_MAX_DIM}, got {d}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k-NN needs k >= 1".into()));
    }
    if samples_p.len() % d != 0 || samples_q.len() % d != 0 {
        return Err(Error::ShapeMismatch(format!("sample buffers are not multiples of d = {d}")));
    }
    let (n, m) = (samples_p.len() / d, samples_q.len() / d);
    if n < KNN_MIN_SAMPLES.max(k + 1) || m < KNN_MIN_SAMPLES.max(k) {
        return Err(Error::InvalidParameter(format!(
            "k-NN KL needs at least {KNN_MIN_SAMPLES} samples per side, got {n} and {m}"
        )));
    }
    let radii = match d {
        1 => radii::<1>(samples_p, samples_q, k),
        2 => radii::<2>(samples_p, samples_q, k),
        3 => radii::<3>(samples_p, samples_q, k),
        _ => radii::<4>(samples_p, samples_q, k),
    };
    let mut floored = 0usize;
    let mut total = 0.0;
    for (rho, nu) in radii {
        if rho < KNN_DIST_FLOOR || nu < KNN_DIST_FLOOR {
            floored += 1;
        }
        total += (nu.max(KNN_DIST_FLOOR) / rho.max(KNN_DIST_FLOOR)).ln();
    }
    if floored > 0 {
        log::warn!("k-NN KL: {floored} duplicate-point distances floored at {KNN_DIST_FLOOR:e}");
    }
    Ok(d as f64 * total / n as f64 + (m as f64 / (n - 1) as f64).ln())
}

fn to_points<const K: usize>(flat: &[f64]) -> Vec<[f64; K]> {
    flat.chunks_exact(K).map(|c| c.try_into().unwrap()).collect()
}

/// `(rho_k(i), nu_k(i))` as Euclidean distances, for every `P` sample.
fn radii<const K: usize>(p: &[f64], q: &[f64], k: usize) -> Vec<(f64, f64)> {
    let pp = to_points::<K>(p);
    let qp = to_points::<K>(q);
    let tree_p: ImmutableKdTree<f64, u64, K, 32> = ImmutableKdTree::new_from_slice(&pp);
    let tree_q: ImmutableKdTree<f64, u64, K, 32> = ImmutableKdTree::new_from_slice(&qp);
    pp.iter()
        .enumerate()
        .map(|(i, x)| {
            let mut own = tree_p.nearest_n::<SquaredEuclidean>(x, NonZero::new(k + 1).unwrap());
            own.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.item.cmp(&b.item)));
            // drop the query point itself; with duplicates, drop the entry carrying its index
            let pos = own.iter().position(|nb| nb.item == i as u64).unwrap_or(0);
            own.remove(pos);
            let rho = own[k - 1].distance.sqrt();
            let mut other = tree_q.nearest_n::<SquaredEuclidean>(x, NonZero::new(k).unwrap());
            other.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.item.cmp(&b.item)));
            (rho, other[k - 1].distance.sqrt())
        })
        .collect()
}
