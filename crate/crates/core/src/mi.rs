//! Kraskov–Stögbauer–Grassberger mutual information (estimator I⁽¹⁾) between
//! subspace activations, with total-variance normalization and the
//! dimension-normalized MI used for merge decisions.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{NdmError, Result};
use crate::linalg::Matrix;
use crate::partition::Partition;

/// Default neighbor count.
pub const DEFAULT_K: usize = 3;
/// Default number of samples drawn for merge-time MI estimates.
pub const DEFAULT_SAMPLES: usize = 4096;

const JITTER_REL: f64 = 1e-10;
const JITTER_SEED: u64 = 0x6a69_7474_6572;

/// Digamma function ψ(x) for x > 0.
///
/// Shifts the argument to ≥ 6 with ψ(x) = ψ(x + 1) − 1/x, then applies the
/// asymptotic expansion.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B₂ₖ / 2k
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - series
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

/// Max-norm distance from point `i` to every point, written into `out`.
fn max_norm_to(cols: &[Vec<f64>], i: usize, out: &mut [f64]) {
    out.fill(0.0);
    for c in cols {
        let ci = c[i];
        for (o, &v) in out.iter_mut().zip(c) {
            let d = (v - ci).abs();
            *o = if d > *o { d } else { *o };
        }
    }
}

fn block_scale(m: &Matrix) -> f64 {
    let total: f64 = m.column_variances().iter().sum();
    (total / m.cols().max(1) as f64).sqrt()
}

fn content_hash(m: &Matrix) -> u64 {
    let mut h = DefaultHasher::new();
    m.shape().hash(&mut h);
    for v in m.as_slice() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Adds tiny independent noise so that repeated points (common when a group
/// of features is silent) have distinct neighbor distances. The noise stream
/// is keyed on the block's contents and scaled to its spread.
fn jittered(m: &Matrix) -> Matrix {
    let scale = block_scale(m);
    if scale == 0.0 {
        return m.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
    rng.set_stream(content_hash(m));
    let amp = JITTER_REL * scale;
    m.map(|v| v + amp * rng.random_range(-1.0..1.0))
}

/// KSG estimate in nats without clamping. Can be slightly negative when the
/// variables are independent.
pub fn ksg_mi_raw(x: &Matrix, y: &Matrix, k: usize) -> Result<f64> {
    let n = x.rows();
    if y.rows() != n {
        return Err(NdmError::ShapeMismatch(format!("x has {n} rows, y has {}", y.rows())));
    }
    if k == 0 || n <= k {
        return Err(NdmError::InsufficientSamples { needed: k, got: n });
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(NdmError::NonFinite("mutual information input"));
    }
    let xj = jittered(x);
    let yj = jittered(y);

    let (xc, yc) = (columns(&xj), columns(&yj));
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n], Vec::with_capacity(k + 1)),
            |(dx, dy, nearest), i| {
                max_norm_to(&xc, i, dx);
                max_norm_to(&yc, i, dy);
                // k smallest joint distances among j ≠ i, ascending
                nearest.clear();
                for (j, (&a, &b)) in dx.iter().zip(dy.iter()).enumerate() {
                    let v = if a > b { a } else { b };
                    if (nearest.len() < k || v < nearest[k - 1]) && j != i {
                        let at = nearest.partition_point(|&u| u <= v);
                        nearest.insert(at, v);
                        nearest.truncate(k);
                    }
                }
                let eps = nearest[k - 1];
                // the point itself sits at distance 0
                let own = usize::from(0.0 < eps);
                let nx = dx.iter().filter(|&&v| v < eps).count() - own;
                let ny = dy.iter().filter(|&&v| v < eps).count() - own;
                digamma((nx + 1) as f64) + digamma((ny + 1) as f64)
            },
        )
        .collect();
    let total: f64 = terms.iter().sum();
    Ok(digamma(k as f64) + digamma(n as f64) - total / n as f64)
}

/// KSG estimate in nats, clamped at 0.
pub fn ksg_mi(x: &Matrix, y: &Matrix, k: usize) -> Result<f64> {
    Ok(ksg_mi_raw(x, y, k)?.max(0.0))
}

/// Divides a block by the square root of its summed per-axis variance, so the
/// result has total variance 1.
pub fn normalize_subspace(h: &Matrix) -> Result<Matrix> {
    if h.rows() < 2 {
        return Err(NdmError::InsufficientSamples { needed: 1, got: h.rows() });
    }
    let total: f64 = h.column_variances().iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(NdmError::DegenerateSubspace(0));
    }
    Ok(h.scale(1.0 / total.sqrt()))
}

/// Pairwise MI between subspaces.
#[derive(Clone, Debug, PartialEq)]
pub struct MiMatrix {
    /// Symmetric, nats, zero diagonal.
    pub raw: Matrix,
    /// `raw[i][j] / (d_i + d_j)`.
    pub normalized: Matrix,
    pub dims: Vec<usize>,
    pub sample_n: usize,
    pub k: usize,
    /// Subspaces with zero variance; their pairs are reported as 0.
    pub degenerate: Vec<usize>,
}

impl MiMatrix {
    pub fn num_subspaces(&self) -> usize {
        self.dims.len()
    }

    /// Largest off-diagonal normalized value.
    pub fn max_normalized(&self) -> f64 {
        self.normalized.max_abs()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.degenerate
            .iter()
            .map(|s| format!("subspace {s} has zero variance; its MI pairs were skipped and recorded as 0"))
            .collect()
    }
}

/// Pairwise MI between the subspaces of `partition` over the rows of `data`.
pub fn partition_mi(data: &Matrix, partition: &Partition, k: usize) -> Result<MiMatrix> {
    pairwise_mi(&partition.subspace_activations(data)?, k)
}

pub fn pairwise_mi(parts: &[Matrix], k: usize) -> Result<MiMatrix> {
    let s = parts.len();
    let pairs: Vec<(usize, usize)> = (0..s).flat_map(|i| (i + 1..s).map(move |j| (i, j))).collect();
    pairwise_mi_subset(parts, k, &pairs)
}

/// MI for the listed pairs only; every other entry stays 0.
pub fn pairwise_mi_subset(parts: &[Matrix], k: usize, pairs: &[(usize, usize)]) -> Result<MiMatrix> {
    let s = parts.len();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= s || j >= s || i == j) {
        return Err(NdmError::OutOfRange { index: i.max(j), len: s });
    }
    let n = parts.first().map_or(0, Matrix::rows);
    if parts.iter().any(|p| p.rows() != n) {
        return Err(NdmError::ShapeMismatch("subspaces disagree on sample count".into()));
    }
    let mut degenerate = Vec::new();
    let normalized_parts: Vec<Option<Matrix>> = parts
        .iter()
        .enumerate()
        .map(|(i, p)| match normalize_subspace(p) {
            Ok(m) => Ok(Some(m)),
            Err(NdmError::DegenerateSubspace(_)) => {
                degenerate.push(i);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match (&normalized_parts[i], &normalized_parts[j]) {
            (Some(a), Some(b)) => ksg_mi(a, b, k),
            _ => Ok(0.0),
        })
        .collect::<Result<_>>()?;

    let dims: Vec<usize> = parts.iter().map(Matrix::cols).collect();
    let mut raw = Matrix::zeros(s, s);
    let mut normalized = Matrix::zeros(s, s);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        raw[(i, j)] = v;
        raw[(j, i)] = v;
        let nv = v / (dims[i] + dims[j]) as f64;
        normalized[(i, j)] = nv;
        normalized[(j, i)] = nv;
    }
    Ok(MiMatrix { raw, normalized, dims, sample_n: n, k, degenerate })
}

#[cfg(test)]
mod tests {
    use rand_distr::StandardNormal;

    use super::*;

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Matrix::zeros(n, 1);
        let mut y = Matrix::zeros(n, 1);
        for i in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            x[(i, 0)] = a;
            y[(i, 0)] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
        (x, y)
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-12);
        assert!((digamma(2.0) - (1.0 - euler)).abs() < 1e-12);
        assert!((digamma(0.5) - (-euler - 2.0 * 2f64.ln())).abs() < 1e-12);
        // ψ(n) = H(n−1) − γ
        let h99: f64 = (1..100).map(|i| 1.0 / i as f64).sum();
        assert!((digamma(100.0) - (h99 - euler)).abs() < 1e-12);
    }

    #[test]
    fn independent_is_near_zero() {
        let (x, _) = gaussian_pair(5000, 0.0, 1);
        let (y, _) = gaussian_pair(5000, 0.0, 2);
        let mi = ksg_mi_raw(&x, &y, 3).unwrap();
        assert!(mi.abs() <= 0.05, "{mi}");
    }

    #[test]
    fn correlated_gaussians() {
        for (rho, tol) in [(0.9, 0.1), (0.5, 0.05)] {
            let (x, y) = gaussian_pair(5000, rho, 3);
            let truth = -0.5 * (1.0_f64 - rho * rho).ln();
            let mi = ksg_mi(&x, &y, 3).unwrap();
            assert!((mi - truth).abs() <= tol, "rho {rho}: {mi} vs {truth}");
        }
    }

    #[test]
    fn bias_over_seeds() {
        let truth = -0.5 * (1.0_f64 - 0.81).ln();
        let mean: f64 = (0..20)
            .map(|seed| {
                let (x, y) = gaussian_pair(5000, 0.9, 100 + seed);
                ksg_mi(&x, &y, 3).unwrap()
            })
            .sum::<f64>()
            / 20.0;
        assert!((mean - truth).abs() <= 0.05, "{mean} vs {truth}");
    }

    #[test]
    fn symmetric_and_translation_invariant() {
        let (x, y) = gaussian_pair(800, 0.7, 4);
        let a = ksg_mi_raw(&x, &y, 3).unwrap();
        assert_eq!(a, ksg_mi_raw(&y, &x, 3).unwrap());
        let shifted = x.map(|v| v + 3.25);
        let b = ksg_mi_raw(&shifted, &y, 3).unwrap();
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn too_few_samples() {
        let (x, y) = gaussian_pair(3, 0.5, 5);
        assert!(matches!(ksg_mi(&x, &y, 3), Err(NdmError::InsufficientSamples { .. })));
    }

    #[test]
    fn duplicated_points_are_handled() {
        // half the rows identical in both variables
        let (mut x, mut y) = gaussian_pair(600, 0.0, 6);
        for i in 0..300 {
            x[(i, 0)] = 0.0;
            y[(i, 0)] = 0.0;
        }
        let mi = ksg_mi_raw(&x, &y, 3).unwrap();
        assert!(mi.is_finite());
    }

    #[test]
    fn normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = Matrix::from_fn(500, 2, |_, j| {
            let z: f64 = rng.sample(StandardNormal);
            z * if j == 0 { 3f64.sqrt() } else { 1.0 }
        });
        let out = normalize_subspace(&h).unwrap();
        let total: f64 = out.column_variances().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // already unit total variance → unchanged
        let again = normalize_subspace(&out).unwrap();
        assert!(again.sub(&out).unwrap().max_abs() < 1e-12);
        let scaled = normalize_subspace(&h.scale(10.0)).unwrap();
        assert!(scaled.sub(&out).unwrap().max_abs() < 1e-12);
        assert!(matches!(normalize_subspace(&Matrix::zeros(4, 2)), Err(NdmError::DegenerateSubspace(_))));
    }

    #[test]
    fn pairwise_independent_blocks_and_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 2000;
        let a = Matrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
        let b = Matrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
        let noisy = a.map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let c = Matrix::from_fn(n, 3, |_, _| rng.sample(StandardNormal));
        let mi = pairwise_mi(&[a, b, noisy, c], 3).unwrap();
        assert_eq!(mi.raw, mi.raw.transpose());
        for i in 0..4 {
            assert_eq!(mi.raw[(i, i)], 0.0);
        }
        assert_eq!(mi.max_normalized(), mi.normalized[(0, 2)]);
        assert_eq!(mi.raw.max_abs(), mi.raw[(0, 2)]);
        for (i, j) in [(0, 1), (0, 3), (1, 2), (1, 3), (2, 3)] {
            assert!(mi.normalized[(i, j)] <= 0.01, "({i},{j}) = {}", mi.normalized[(i, j)]);
        }
        assert!((mi.normalized[(0, 2)] * 4.0 - mi.raw[(0, 2)]).abs() < 1e-15);
    }

    #[test]
    fn subset_fills_only_requested_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let parts: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(300, 1, |_, _| rng.sample(StandardNormal))).collect();
        let full = pairwise_mi(&parts, 3).unwrap();
        let sub = pairwise_mi_subset(&parts, 3, &[(0, 2)]).unwrap();
        assert_eq!(sub.raw[(2, 0)], full.raw[(0, 2)]);
        assert_eq!(sub.raw[(0, 1)], 0.0);
        assert!(pairwise_mi_subset(&parts, 3, &[(1, 1)]).is_err());
    }

    #[test]
    fn degenerate_subspace_recorded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Matrix::from_fn(100, 1, |_, _| rng.sample(StandardNormal));
        let mi = pairwise_mi(&[a, Matrix::zeros(100, 1)], 3).unwrap();
        assert_eq!(mi.degenerate, vec![1]);
        assert_eq!(mi.raw[(0, 1)], 0.0);
        assert_eq!(mi.warnings().len(), 1);
    }
}
