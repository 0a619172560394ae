//! Superposition toy model: `h = W x`, `x̂ = ReLU(Wᵀ h + b)`, trained on
//! inputs built from mutually exclusive feature groups.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NdmError, Result};
use crate::linalg::{AdamState, LinearSchedule, Matrix};
use crate::rng::{self, streams};

/// Features split into groups; at most one feature per group fires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureGroupSpec {
    pub group_sizes: Vec<usize>,
    /// Probability that a whole group is silent in a sample.
    pub group_sparsity: f64,
}

impl FeatureGroupSpec {
    pub fn new(group_sizes: Vec<usize>, group_sparsity: f64) -> Result<Self> {
        let spec = Self { group_sizes, group_sparsity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(NdmError::InvalidConfig(format!(
                "group sizes must be nonempty and positive, got {:?}",
                self.group_sizes
            )));
        }
        if !(0.0..=1.0).contains(&self.group_sparsity) {
            return Err(NdmError::ValueOutOfRange { value: self.group_sparsity, lo: 0.0, hi: 1.0 });
        }
        Ok(())
    }

    /// Total number of features.
    pub fn z(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Feature index ranges, one per group.
    pub fn group_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.group_sizes
            .iter()
            .map(|&len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }
}

/// Draw `n` feature vectors.
pub fn sample_features(spec: &FeatureGroupSpec, n: usize, rng: &mut impl Rng) -> Matrix {
    let z = spec.z();
    let ranges = spec.group_ranges();
    let mut x = Matrix::zeros(n, z);
    for i in 0..n {
        let row = x.row_mut(i);
        for r in &ranges {
            if rng.random::<f64>() < spec.group_sparsity {
                continue;
            }
            let f = rng.random_range(r.clone());
            row[f] = rng.random::<f64>();
        }
    }
    x
}

/// [`sample_features`] with one group forced to fire (`active`) or stay silent.
pub fn sample_features_forced(
    spec: &FeatureGroupSpec,
    n: usize,
    group: usize,
    active: bool,
    rng: &mut impl Rng,
) -> Result<Matrix> {
    let ranges = spec.group_ranges();
    let range = ranges.get(group).ok_or(NdmError::OutOfRange { index: group, len: ranges.len() })?.clone();
    let mut x = sample_features(spec, n, rng);
    for i in 0..n {
        let row = &mut x.row_mut(i)[range.clone()];
        row.fill(0.0);
        if active {
            let f = rng.random_range(0..row.len());
            row[f] = rng.random::<f64>();
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    /// `d × z`; column `i` is the direction of feature `i`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ToyModel {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.cols() {
            return Err(NdmError::LengthMismatch { expected: w.cols(), actual: b.len() });
        }
        if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(NdmError::NonFinite("toy model weights"));
        }
        Ok(Self { w, b })
    }

    pub fn d(&self) -> usize {
        self.w.rows()
    }

    pub fn z(&self) -> usize {
        self.w.cols()
    }

    /// Hidden activations `h = x Wᵀ` (one row per sample).
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.z() {
            return Err(NdmError::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.z()
            )));
        }
        x.matmul_t(&self.w)
    }

    /// `x̂ = ReLU(h W + b)`; the rest of the forward pass from a hidden state.
    pub fn decode(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.d() {
            return Err(NdmError::ShapeMismatch(format!(
                "hidden state has {} columns, model expects {}",
                h.cols(),
                self.d()
            )));
        }
        let mut pre = h.matmul(&self.w)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&self.b) {
                *v = (*v + b).max(0.0);
            }
        }
        Ok(pre)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let h = self.encode(x)?;
        let x_hat = self.decode(&h)?;
        Ok((h, x_hat))
    }

    /// `WᵀW`
    pub fn gram(&self) -> Matrix {
        self.w.t_matmul(&self.w).expect("WᵀW shape")
    }

    /// Batch-mean of per-sample summed squared error, and its gradient
    /// with respect to `(W, b)`.
    pub fn loss_and_grad(&self, x: &Matrix) -> Result<(f64, Matrix, Vec<f64>)> {
        let h = self.encode(x)?;
        let x_hat = self.decode(&h)?;
        let n = x.rows() as f64;
        let mut loss = 0.0;
        let mut delta = Matrix::zeros(x.rows(), self.z());
        for i in 0..x.rows() {
            let (xr, xh) = (x.row(i), x_hat.row(i));
            let dr = delta.row_mut(i);
            for j in 0..xr.len() {
                let e = xh[j] - xr[j];
                loss += e * e;
                // x̂ > 0 exactly when the ReLU is active
                if xh[j] > 0.0 {
                    dr[j] = 2.0 * e / n;
                }
            }
        }
        // x̂ depends on W both through h = xWᵀ and through the decoder.
        let mut grad_w = h.t_matmul(&delta)?;
        let g_hidden = delta.matmul_t(&self.w)?;
        grad_w.add_assign(&g_hidden.t_matmul(x)?)?;
        let grad_b = delta.column_means().iter().map(|m| m * n).collect();
        Ok((loss / n, grad_w, grad_b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self { batch: 128, steps: 10_000, lr_start: 0.003, lr_end: 0.0003, eval_samples: 12_800, seed: 0 }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.eval_samples == 0 {
            return Err(NdmError::InvalidConfig("steps, batch and eval_samples must be ≥ 1".into()));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(NdmError::InvalidConfig(format!(
                "need lr_start ≥ lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedToy {
    pub model: ToyModel,
    pub fvu: f64,
    pub final_loss: f64,
}

pub fn init_toy(d: usize, z: usize, rng: &mut impl Rng) -> ToyModel {
    let std = 0.3 / (d as f64).sqrt();
    let w = Matrix::from_fn(d, z, |_, _| std * rng.sample::<f64, _>(StandardNormal));
    ToyModel { w, b: vec![0.0; z] }
}

pub fn train_toy(spec: &FeatureGroupSpec, d: usize, cfg: &ToyTrainConfig) -> Result<TrainedToy> {
    spec.validate()?;
    cfg.validate()?;
    let z = spec.z();
    if d == 0 || d > z {
        return Err(NdmError::InvalidConfig(format!("hidden dim {d} must be in 1..={z}")));
    }
    let mut model = init_toy(d, z, &mut rng::stream(cfg.seed, streams::TOY_INIT));
    let mut data_rng = rng::stream(cfg.seed, streams::TOY_DATA);
    let schedule = LinearSchedule { start: cfg.lr_start, end: cfg.lr_end, steps: cfg.steps };
    let n_w = d * z;
    let mut adam = AdamState::new(n_w + z, cfg.lr_start);
    let mut params = vec![0.0; n_w + z];
    let mut grads = vec![0.0; n_w + z];
    let mut final_loss = f64::NAN;

    for step in 0..cfg.steps {
        let x = sample_features(spec, cfg.batch, &mut data_rng);
        let (loss, gw, gb) = model.loss_and_grad(&x)?;
        final_loss = loss;
        params[..n_w].copy_from_slice(model.w.as_slice());
        params[n_w..].copy_from_slice(&model.b);
        grads[..n_w].copy_from_slice(gw.as_slice());
        grads[n_w..].copy_from_slice(&gb);
        adam.step_scaled(&mut params, &grads, schedule.multiplier(step))?;
        model.w.as_mut_slice().copy_from_slice(&params[..n_w]);
        model.b.copy_from_slice(&params[n_w..]);
    }

    let x_eval = sample_features(spec, cfg.eval_samples, &mut rng::stream(cfg.seed, streams::TOY_EVAL));
    let (_, x_hat) = model.forward(&x_eval)?;
    let fvu = fvu(&x_eval, &x_hat)?;
    Ok(TrainedToy { model, fvu, final_loss })
}

/// Fraction of variance unexplained: `Σ(x − x̂)² / Σ(x − x̄)²` with per-column means.
pub fn fvu(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(NdmError::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    let means = x.column_means();
    let mut resid = 0.0;
    let mut total = 0.0;
    for (a, b) in x.row_iter().zip(x_hat.row_iter()) {
        for ((xa, xb), m) in a.iter().zip(b).zip(&means) {
            resid += (xa - xb) * (xa - xb);
            total += (xa - m) * (xa - m);
        }
    }
    if total == 0.0 {
        return Err(NdmError::ZeroVariance);
    }
    Ok(resid / total)
}

/// Largest |entry| of `WᵀW` outside the same-group diagonal blocks, relative
/// to the largest |entry| overall.
pub fn cross_group_ratio(gram: &Matrix, spec: &FeatureGroupSpec) -> f64 {
    let group_of = group_index(spec);
    let mut cross = 0.0_f64;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            if group_of[i] != group_of[j] {
                cross = cross.max(gram[(i, j)].abs());
            }
        }
    }
    let overall = gram.max_abs();
    if overall == 0.0 {
        0.0
    } else {
        cross / overall
    }
}

fn group_index(spec: &FeatureGroupSpec) -> Vec<usize> {
    spec.group_sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(g, n)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Purity {
    pub value: f64,
    /// Best-matching feature group.
    pub group: usize,
    /// Subspace rows carry no energy; `value` is reported as 1.
    pub degenerate: bool,
}

/// For each subspace (a contiguous block of rows of `rw`), the largest share
/// of its squared-entry energy that falls on a single feature group.
pub fn block_purity(rw: &Matrix, spec: &FeatureGroupSpec, dims: &[usize]) -> Result<Vec<Purity>> {
    if dims.iter().sum::<usize>() != rw.rows() || rw.cols() != spec.z() {
        return Err(NdmError::ShapeMismatch(format!(
            "RW {:?} against dims {dims:?} and z = {}",
            rw.shape(),
            spec.z()
        )));
    }
    let ranges = spec.group_ranges();
    let mut out = Vec::with_capacity(dims.len());
    let mut start = 0;
    for &ds in dims {
        let mut per_group = vec![0.0; ranges.len()];
        for i in start..start + ds {
            let row = rw.row(i);
            for (g, r) in ranges.iter().enumerate() {
                per_group[g] += row[r.clone()].iter().map(|v| v * v).sum::<f64>();
            }
        }
        let total: f64 = per_group.iter().sum();
        let (group, best) = per_group
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (g, e)| if e > acc.1 { (g, e) } else { acc });
        out.push(if total == 0.0 {
            Purity { value: 1.0, group, degenerate: true }
        } else {
            Purity { value: best / total, group, degenerate: false }
        });
        start += ds;
    }
    Ok(out)
}

pub fn mean_purity(p: &[Purity]) -> f64 {
    p.iter().map(|x| x.value).sum::<f64>() / p.len().max(1) as f64
}

/// Named toy configurations.
#[derive(Clone, Debug)]
pub struct ToyPreset {
    pub name: &'static str,
    pub spec: FeatureGroupSpec,
    pub d: usize,
}

pub fn toy_preset(name: &str) -> Option<ToyPreset> {
    let (name, groups, d): (&'static str, Vec<usize>, usize) = match name {
        "toy-2x20" => ("toy-2x20", vec![20, 20], 12),
        "toy-4group" => ("toy-4group", vec![5, 15, 5, 15], 12),
        "toy-2x80" => ("toy-2x80", vec![80, 80], 32),
        "toy-12x3" => ("toy-12x3", vec![3; 12], 24),
        _ => return None,
    };
    Some(ToyPreset { name, spec: FeatureGroupSpec { group_sizes: groups, group_sparsity: 0.25 }, d })
}

pub const TOY_PRESETS: [&str; 4] = ["toy-2x20", "toy-4group", "toy-2x80", "toy-12x3"];

/// Hidden activations of `n` fresh samples.
pub fn toy_activations(model: &ToyModel, spec: &FeatureGroupSpec, n: usize, rng: &mut impl Rng) -> Result<Matrix> {
    model.encode(&sample_features(spec, n, rng))
}
