//! Neighbor distance minimization: learns an orthogonal `R` and a dimension
//! configuration by pulling each activation toward its nearest neighbor inside
//! every subspace, merging subspaces whose activations stay dependent.

mod loss;
mod merge;
mod search;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use loss::{ndm_loss, ndm_loss_at, LossOutput};
pub use merge::{merge_step, select_merge_pairs, toy_reinit, MergeOutcome, Reinit};
pub use search::{nearest_in_subspace, Distance, Neighbors};

use crate::error::{NdmError, Result};
use crate::io::ActivationBuffer;
use crate::linalg::{expm, orthogonalize_vjp, random_orthogonal, AdamState, Matrix, SkewParam};
use crate::mi::{pairwise_mi, pairwise_mi_subset, MiMatrix};
use crate::partition::Partition;
use crate::rng::{stream, streams, RunRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchScope {
    /// Scan `search_number` rows from the buffer in blocks of `block_size`.
    #[default]
    Stream,
    /// Scan `search_number` other rows of the current batch.
    InBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NdmConfig {
    pub unit_size: usize,
    pub search_number: usize,
    pub block_size: usize,
    pub search_scope: SearchScope,
    pub batch: usize,
    pub lr: f64,
    pub merge_threshold: f64,
    pub merge_interval: usize,
    pub merge_start_delay: usize,
    pub max_steps: usize,
    pub distance: Distance,
    pub dim_weighting: bool,
    /// Steps between largest-loss re-initializations before merging starts;
    /// 0 disables them.
    pub reinit_interval: usize,
    /// Search number used when ranking subspaces by loss for re-initialization.
    pub eval_search_number: usize,
    /// Query rows used when ranking subspaces by loss.
    pub eval_queries: usize,
    /// Undo a re-initialization that ends with a higher evaluation loss than
    /// the rotation it replaced.
    pub reinit_keep_best: bool,
    pub mi_samples: usize,
    pub mi_k: usize,
    pub seed: u64,
}

impl Default for NdmConfig {
    fn default() -> Self {
        Self::lm()
    }
}

impl NdmConfig {
    /// Toy-model preset: in-batch search over 4 rows, re-initialization every
    /// 3k steps during the 60k-step warm-up.
    pub fn toy() -> Self {
        Self {
            unit_size: 2,
            search_number: 4,
            block_size: 4,
            search_scope: SearchScope::InBatch,
            batch: 128,
            lr: 1e-3,
            merge_threshold: 0.04,
            merge_interval: 3000,
            merge_start_delay: 60_000,
            max_steps: 150_000,
            distance: Distance::Euclidean,
            dim_weighting: false,
            reinit_interval: 3000,
            eval_search_number: 1024,
            eval_queries: 512,
            reinit_keep_best: true,
            mi_samples: crate::mi::DEFAULT_SAMPLES,
            mi_k: crate::mi::DEFAULT_K,
            seed: 0,
        }
    }

    /// Language-model preset.
    pub fn lm() -> Self {
        Self {
            unit_size: 32,
            search_number: 25 << 14,
            block_size: 1 << 14,
            search_scope: SearchScope::Stream,
            batch: 128,
            lr: 3e-4,
            merge_threshold: 0.04,
            merge_interval: 8000,
            merge_start_delay: 20_000,
            max_steps: 100_000,
            distance: Distance::Euclidean,
            dim_weighting: false,
            reinit_interval: 0,
            eval_search_number: 1024,
            eval_queries: 512,
            reinit_keep_best: false,
            mi_samples: crate::mi::DEFAULT_SAMPLES,
            mi_k: crate::mi::DEFAULT_K,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "lm" => Some(Self::lm()),
            _ => None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(NdmError::InvalidConfig(m));
        if self.unit_size == 0 || d % self.unit_size != 0 {
            return bad(format!("unit_size {} must divide d = {d}", self.unit_size));
        }
        if self.batch < 2 {
            return bad("batch must be at least 2".into());
        }
        if self.search_number == 0 {
            return bad("search_number must be positive".into());
        }
        if self.search_scope == SearchScope::Stream
            && (self.block_size == 0 || self.search_number % self.block_size != 0)
        {
            return bad(format!(
                "search_number {} must be a multiple of block_size {}",
                self.search_number, self.block_size
            ));
        }
        if !(self.merge_threshold > 0.0) {
            return bad("merge_threshold must be positive".into());
        }
        if self.merge_interval == 0 {
            return bad("merge_interval must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive".into());
        }
        if self.mi_k == 0 || self.mi_samples <= self.mi_k {
            return bad("mi_samples must exceed mi_k ≥ 1".into());
        }
        if self.reinit_interval > 0 && (self.eval_search_number == 0 || self.eval_queries == 0) {
            return bad("eval_search_number and eval_queries must be positive".into());
        }
        Ok(())
    }
}

/// Starting point for `R`.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialRotation {
    Identity,
    RandomOrthogonal,
    Given(Matrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub s: usize,
    pub c: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub step: usize,
    pub pair: (usize, usize),
    pub dims: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinitEvent {
    pub step: usize,
    pub target: usize,
    pub partner: usize,
    /// The previous re-initialization was undone before this one because it
    /// ended with a higher loss.
    pub reverted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiSnapshot {
    pub step: usize,
    pub c: Vec<usize>,
    pub max_normalized: f64,
    pub normalized: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No pair of subspaces exceeded the merge threshold.
    Converged,
    MaxSteps,
    BufferExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
    pub merges: Vec<MergeEvent>,
    pub reinits: Vec<ReinitEvent>,
    pub mi_snapshots: Vec<MiSnapshot>,
    pub termination: Termination,
    /// Largest `‖RᵀR − I‖_max` observed.
    pub max_orthogonality_defect: f64,
}

impl TrainTrace {
    /// One JSON object per step: `step`, `loss`, `s`, `c`.
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for rec in &self.steps {
            serde_json::to_writer(&mut *w, rec).map_err(|e| NdmError::Parse(e.to_string()))?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Progress notifications from [`train_ndm_with`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { step: usize, loss: f64 },
    Merge { step: usize, partition: &'a Partition, pairs: &'a [(usize, usize)] },
    Reinit { step: usize, target: usize, partner: usize },
    Finished { step: usize, partition: &'a Partition, termination: Termination },
}

#[derive(Clone, Debug)]
pub struct NdmRun {
    /// Final partition with blocks sorted by decreasing dimension.
    pub partition: Partition,
    pub trace: TrainTrace,
}

/// `R = exp(A) · R₀`, with `A` trained and `R₀` holding everything folded in
/// by merges and re-initializations.
struct Rotation {
    r0: Matrix,
    a: SkewParam,
    adam: AdamState,
}

impl Rotation {
    fn new(r0: Matrix, lr: f64) -> Self {
        let d = r0.rows();
        Self { r0, a: SkewParam::zeros(d), adam: AdamState::new(SkewParam::param_count(d), lr) }
    }

    fn realized(&self) -> Matrix {
        expm(&self.a.to_matrix()).matmul(&self.r0).expect("square factors")
    }

    fn fold(&mut self, r: Matrix) {
        self.r0 = r;
        self.a = SkewParam::zeros(self.r0.rows());
        self.adam.reset();
    }

    fn step(&mut self, grad_r: &Matrix) -> Result<()> {
        let grad_e = grad_r.matmul_t(&self.r0)?;
        let grads = orthogonalize_vjp(&self.a, &grad_e)?;
        self.adam.step(self.a.values_mut(), &grads)
    }
}

fn mi_for(partition: &Partition, buffer: &mut ActivationBuffer, cfg: &NdmConfig) -> Result<MiMatrix> {
    let sample = buffer.next(cfg.mi_samples)?;
    pairwise_mi(&partition.subspace_activations(&sample.data)?, cfg.mi_k)
}

/// Fixed queries and candidates for ranking subspaces by loss.
struct EvalSet {
    queries: crate::io::Batch,
    pool: crate::io::Batch,
}

/// Mean nearest-neighbor distance per subspace over the evaluation pool.
fn eval_losses(partition: &Partition, eval: &EvalSet, cfg: &NdmConfig) -> Result<Vec<f64>> {
    let mut pool = Some((eval.pool.data.clone(), eval.pool.rows.clone()));
    let found = search::search_stream(
        &eval.queries.data,
        &eval.queries.rows,
        partition.r(),
        &partition.ranges(),
        || Ok(pool.take().expect("single block")),
        1,
        cfg.distance,
    )?;
    Ok(found.distances.iter().map(|d| mean(d)).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn train_ndm(buffer: &mut ActivationBuffer, cfg: &NdmConfig, init: InitialRotation) -> Result<NdmRun> {
    train_ndm_with(buffer, cfg, init, &mut |_| {})
}

pub fn train_ndm_with(
    buffer: &mut ActivationBuffer,
    cfg: &NdmConfig,
    init: InitialRotation,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<NdmRun> {
    let d = buffer.dim();
    cfg.validate(d)?;
    let r0 = match init {
        InitialRotation::Identity => Matrix::identity(d),
        InitialRotation::RandomOrthogonal => random_orthogonal(d, &mut stream(cfg.seed, streams::NDM_INIT)),
        InitialRotation::Given(r) => {
            Partition::new(r.clone(), vec![d])?;
            r
        }
    };
    let mut search_rng: RunRng = stream(cfg.seed, streams::NDM_SEARCH);
    let mut reinit_rng: RunRng = stream(cfg.seed, streams::NDM_REINIT);
    let mut rot = Rotation::new(r0, cfg.lr);
    let mut dims = vec![cfg.unit_size; d / cfg.unit_size];
    let mut trace = TrainTrace {
        steps: Vec::new(),
        merges: Vec::new(),
        reinits: Vec::new(),
        mi_snapshots: Vec::new(),
        termination: Termination::MaxSteps,
        max_orthogonality_defect: 0.0,
    };

    let reinit_set = if cfg.reinit_interval > 0 {
        Some(EvalSet { queries: buffer.next(cfg.eval_queries)?, pool: buffer.next(cfg.eval_search_number)? })
    } else {
        None
    };
    // rotation before the latest re-initialization, with its evaluation loss
    let mut kept: Option<(Matrix, f64)> = None;

    let mut step = 0;
    while step < cfg.max_steps {
        let batch = match buffer.pop(cfg.batch) {
            Ok(b) => b,
            Err(NdmError::BufferExhausted { .. }) if step < cfg.merge_start_delay => {
                return Err(NdmError::ActivationsTooFew { step, delay: cfg.merge_start_delay });
            }
            Err(NdmError::BufferExhausted { .. }) => {
                trace.termination = Termination::BufferExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        let r = rot.realized();
        trace.max_orthogonality_defect = trace.max_orthogonality_defect.max(r.orthogonality_defect());
        let ranges = crate::partition::block_ranges(&dims);
        let neighbors = match cfg.search_scope {
            SearchScope::InBatch => {
                search::search_in_batch(&batch.data, &r, &ranges, cfg.search_number, cfg.distance, &mut search_rng)?
            }
            SearchScope::Stream => search::search_stream(
                &batch.data,
                &batch.rows,
                &r,
                &ranges,
                || buffer.next(cfg.block_size).map(|b| (b.data, b.rows)),
                cfg.search_number / cfg.block_size,
                cfg.distance,
            )?,
        };
        let out = ndm_loss_at(&batch.data, &r, &dims, &neighbors.rows, cfg.distance, cfg.dim_weighting)?;
        rot.step(&out.grad_r)?;
        step += 1;
        trace.steps.push(StepRecord { step, loss: out.loss, s: dims.len(), c: dims.clone() });
        observer(&TrainEvent::Step { step, loss: out.loss });

        let reinit_due = reinit_set.is_some()
            && dims.len() >= 2
            && step % cfg.reinit_interval == 0
            && step <= cfg.merge_start_delay;
        if reinit_due {
            let eval = reinit_set.as_ref().expect("checked above");
            let mut current = Partition::new(rot.realized(), dims.clone())?;
            let mut losses = eval_losses(&current, eval, cfg)?;
            let mut reverted = false;
            if let Some((r, best)) = kept.take() {
                if best < mean(&losses) {
                    current = Partition::new(r, dims.clone())?;
                    losses = eval_losses(&current, eval, cfg)?;
                    rot.fold(current.r().clone());
                    reverted = true;
                }
            }
            if step < cfg.merge_start_delay {
                if cfg.reinit_keep_best {
                    kept = Some((current.r().clone(), mean(&losses)));
                }
                let target = merge::largest(&losses);
                let pairs: Vec<(usize, usize)> =
                    (0..dims.len()).filter(|&o| o != target).map(|o| (o.min(target), o.max(target))).collect();
                let sample = buffer.next(cfg.mi_samples)?;
                let mi = pairwise_mi_subset(&current.subspace_activations(&sample.data)?, cfg.mi_k, &pairs)?;
                let re = toy_reinit(&current, &losses, &mi, &mut reinit_rng)?;
                trace.reinits.push(ReinitEvent { step, target: re.target, partner: re.partner, reverted });
                observer(&TrainEvent::Reinit { step, target: re.target, partner: re.partner });
                rot.fold(re.partition.r().clone());
            }
        }
        if step >= cfg.merge_start_delay && (step - cfg.merge_start_delay) % cfg.merge_interval == 0 {
            let current = Partition::new(rot.realized(), dims.clone())?;
            let mi = mi_for(&current, buffer, cfg)?;
            trace.mi_snapshots.push(MiSnapshot {
                step,
                c: dims.clone(),
                max_normalized: mi.max_normalized(),
                normalized: (0..mi.num_subspaces()).map(|i| mi.normalized.row(i).to_vec()).collect(),
            });
            let merged = merge_step(&mi, &current, cfg.merge_threshold)?;
            if merged.stop {
                trace.termination = Termination::Converged;
                break;
            }
            for &(i, j) in &merged.pairs {
                trace.merges.push(MergeEvent { step, pair: (i, j), dims: (dims[i], dims[j]) });
            }
            observer(&TrainEvent::Merge { step, partition: &merged.partition, pairs: &merged.pairs });
            dims = merged.partition.dims().to_vec();
            rot.fold(merged.partition.r().clone());
        }
    }

    let r = rot.realized();
    trace.max_orthogonality_defect = trace.max_orthogonality_defect.max(r.orthogonality_defect());
    let partition = Partition::new(r, dims)?.sorted_descending();
    observer(&TrainEvent::Finished { step, partition: &partition, termination: trace.termination });
    Ok(NdmRun { partition, trace })
}
