//! Patching experiment on a toy model with a readout of one feature group.

use rand::Rng;

use super::baselines::subspace_variances;
use super::gini::PatchingRecord;
use super::patching::patch_rows;
use crate::error::{NdmError, Result};
use crate::linalg::Matrix;
use crate::partition::Partition;
use crate::toy::{sample_features, sample_features_forced, FeatureGroupSpec, ToyModel};

/// `y = Σ_k weights[k] · x̂_k` over the reconstructed features of one group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReadout {
    pub group: usize,
    pub weights: Vec<f64>,
}

impl GroupReadout {
    pub fn uniform(spec: &FeatureGroupSpec, group: usize) -> Result<Self> {
        let len = *spec.group_sizes.get(group).ok_or(NdmError::OutOfRange { index: group, len: spec.group_sizes.len() })?;
        Ok(Self { group, weights: vec![1.0; len] })
    }

    pub fn eval(&self, model: &ToyModel, spec: &FeatureGroupSpec, h: &Matrix) -> Result<Vec<f64>> {
        let ranges = spec.group_ranges();
        let range = ranges.get(self.group).ok_or(NdmError::OutOfRange { index: self.group, len: ranges.len() })?;
        if range.len() != self.weights.len() {
            return Err(NdmError::LengthMismatch { expected: range.len(), actual: self.weights.len() });
        }
        let x_hat = model.decode(h)?;
        Ok(x_hat.row_iter().map(|row| row[range.clone()].iter().zip(&self.weights).map(|(x, w)| x * w).sum()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPatching {
    /// Effects are mean drops of the readout, `y(clean) − y(patched)`.
    pub record: PatchingRecord,
    /// Mean readout on clean inputs.
    pub clean_mean: f64,
    /// `mean |y(clean) − y(patched)| / mean |y(clean)|` per subspace.
    pub relative_shift: Vec<f64>,
}

/// Clean inputs have the readout group firing; counterfactuals are
/// independent draws with that group silent. Each subspace is patched from
/// the counterfactual into the clean hidden state and decoded.
pub fn toy_patching(
    model: &ToyModel,
    spec: &FeatureGroupSpec,
    partition: &Partition,
    readout: &GroupReadout,
    n: usize,
    rng: &mut impl Rng,
) -> Result<ToyPatching> {
    if n < 2 {
        return Err(NdmError::InsufficientSamples { needed: 1, got: n });
    }
    let clean = model.encode(&sample_features_forced(spec, n, readout.group, true, rng)?)?;
    let corrupt = model.encode(&sample_features_forced(spec, n, readout.group, false, rng)?)?;
    let reference = model.encode(&sample_features(spec, n, rng))?;
    let y_clean = readout.eval(model, spec, &clean)?;
    let scale = y_clean.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let mut effects = Vec::with_capacity(partition.num_subspaces());
    let mut shift = Vec::with_capacity(partition.num_subspaces());
    for s in 0..partition.num_subspaces() {
        let y = readout.eval(model, spec, &patch_rows(&clean, &corrupt, partition, s)?)?;
        effects.push(y_clean.iter().zip(&y).map(|(a, b)| a - b).sum::<f64>() / n as f64);
        let moved = y_clean.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        shift.push(if scale > 0.0 { moved / scale } else { moved });
    }
    let record = PatchingRecord::new(effects, partition.dims().to_vec(), subspace_variances(&reference, partition)?)?;
    Ok(ToyPatching { record, clean_mean: y_clean.iter().sum::<f64>() / n as f64, relative_shift: shift })
}
