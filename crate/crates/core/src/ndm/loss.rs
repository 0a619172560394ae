//! Neighbor distance loss and its gradient with respect to `R`.

use super::search::Distance;
use crate::error::{NdmError, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::partition::{block_ranges, validate_dims, Partition};

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    /// Mean over subspaces of the (optionally dimension-weighted) terms.
    pub loss: f64,
    /// Unweighted mean neighbor distance per subspace.
    pub per_subspace: Vec<f64>,
    /// dLoss/dR.
    pub grad_r: Matrix,
}

/// Loss for a batch and its precomputed neighbors (one raw `b × d` matrix
/// per subspace), with both sides projected under `partition`.
pub fn ndm_loss(
    batch: &Matrix,
    partition: &Partition,
    neighbors: &[Matrix],
    distance: Distance,
    dim_weighting: bool,
) -> Result<LossOutput> {
    ndm_loss_at(batch, partition.r(), partition.dims(), neighbors, distance, dim_weighting)
}

/// Same as [`ndm_loss`] for an arbitrary square `r`, orthogonal or not.
pub fn ndm_loss_at(
    batch: &Matrix,
    r: &Matrix,
    dims: &[usize],
    neighbors: &[Matrix],
    distance: Distance,
    dim_weighting: bool,
) -> Result<LossOutput> {
    let (b, d) = batch.shape();
    if r.shape() != (d, d) {
        return Err(NdmError::ShapeMismatch(format!("R is {:?}, batch has {d} columns", r.shape())));
    }
    validate_dims(dims, d)?;
    if neighbors.len() != dims.len() {
        return Err(NdmError::LengthMismatch { expected: dims.len(), actual: neighbors.len() });
    }
    if let Some(bad) = neighbors.iter().find(|n| n.shape() != (b, d)) {
        return Err(NdmError::ShapeMismatch(format!("neighbors are {:?}, batch is {:?}", bad.shape(), (b, d))));
    }
    if b == 0 {
        return Err(NdmError::InsufficientSamples { needed: 1, got: 0 });
    }
    let s_count = dims.len() as f64;
    let mut grad = Matrix::zeros(d, d);
    let mut per_subspace = Vec::with_capacity(dims.len());
    let mut loss = 0.0;
    for ((range, nb), &ds) in block_ranges(dims).into_iter().zip(neighbors).zip(dims) {
        let weight = if dim_weighting && distance == Distance::OneMinusCosine { ds as f64 } else { 1.0 };
        let coef = weight / (s_count * b as f64);
        let mut total = 0.0;
        let mut a = vec![0.0; ds];
        let mut c = vec![0.0; ds];
        for i in 0..b {
            let (q, n) = (batch.row(i), nb.row(i));
            for (k, row) in range.clone().enumerate() {
                a[k] = dot(r.row(row), q);
                c[k] = dot(r.row(row), n);
            }
            match distance {
                Distance::Euclidean => {
                    let u: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x - y).collect();
                    let len = norm(&u);
                    total += len;
                    if len > 0.0 {
                        for (k, row) in range.clone().enumerate() {
                            let g = coef * u[k] / len;
                            let gr = grad.row_mut(row);
                            for ((gv, &qv), &nv) in gr.iter_mut().zip(q).zip(n) {
                                *gv += g * (qv - nv);
                            }
                        }
                    }
                }
                Distance::OneMinusCosine => {
                    let (na, nc) = (norm(&a), norm(&c));
                    if na == 0.0 || nc == 0.0 {
                        total += 1.0;
                        continue;
                    }
                    let cos = dot(&a, &c) / (na * nc);
                    total += 1.0 - cos;
                    for (k, row) in range.clone().enumerate() {
                        let ga = -(c[k] / (na * nc) - cos * a[k] / (na * na));
                        let gc = -(a[k] / (na * nc) - cos * c[k] / (nc * nc));
                        let gr = grad.row_mut(row);
                        for ((gv, &qv), &nv) in gr.iter_mut().zip(q).zip(n) {
                            *gv += coef * (ga * qv + gc * nv);
                        }
                    }
                }
            }
        }
        let term = total / b as f64;
        per_subspace.push(term);
        loss += weight * term / s_count;
    }
    Ok(LossOutput { loss, per_subspace, grad_r: grad })
}
