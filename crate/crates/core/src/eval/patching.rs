//! Subspace patching and the effect metrics computed from patched runs.

use serde::{Deserialize, Serialize};

use crate::error::{NdmError, Result};
use crate::linalg::Matrix;
use crate::partition::Partition;

/// `Rᵀ · replace_block(R h_cln, s ← block_s(R h_crp))`.
pub fn patch_compose(h_cln: &[f64], h_crp: &[f64], partition: &Partition, s: usize) -> Result<Vec<f64>> {
    let d = partition.d();
    for v in [h_cln, h_crp] {
        if v.len() != d {
            return Err(NdmError::LengthMismatch { expected: d, actual: v.len() });
        }
    }
    let range = partition.range(s)?;
    let r = partition.r();
    let mut rotated = r.mul_vec(h_cln)?;
    for row in range {
        rotated[row] = crate::linalg::dot(r.row(row), h_crp);
    }
    r.t_mul_vec(&rotated)
}

/// Row-wise [`patch_compose`] over paired batches.
pub fn patch_rows(clean: &Matrix, corrupt: &Matrix, partition: &Partition, s: usize) -> Result<Matrix> {
    if clean.shape() != corrupt.shape() {
        return Err(NdmError::ShapeMismatch(format!("clean {:?} vs corrupt {:?}", clean.shape(), corrupt.shape())));
    }
    if clean.cols() != partition.d() {
        return Err(NdmError::LengthMismatch { expected: partition.d(), actual: clean.cols() });
    }
    let range = partition.range(s)?;
    let rc = partition.rotate(clean)?;
    let rp = partition.rotate(corrupt)?;
    let mut mixed = rc;
    for i in 0..mixed.rows() {
        mixed.row_mut(i)[range.clone()].copy_from_slice(&rp.row(i)[range.clone()]);
    }
    mixed.matmul(partition.r())
}

/// Answer logits on one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub io: f64,
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub clean: Logits,
    pub patched: Logits,
}

/// Drop in logit difference.
pub fn delta_ld(p: &LogitPair) -> f64 {
    (p.clean.io - p.clean.s) - (p.patched.io - p.patched.s)
}

/// Drop in the probability mass of valid answers.
pub fn delta_p(clean_mass: f64, patched_mass: f64) -> Result<f64> {
    for m in [clean_mass, patched_mass] {
        if !(0.0..=1.0).contains(&m) {
            return Err(NdmError::ValueOutOfRange { value: m, lo: 0.0, hi: 1.0 });
        }
    }
    Ok(clean_mass - patched_mass)
}
