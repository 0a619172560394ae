//! An orthogonal matrix `R` together with a dimension configuration `c`.
//! The rotated space `R h` is cut into contiguous coordinate blocks of
//! sizes `c[0], c[1], …`.

use std::ops::Range;

use crate::error::{NdmError, Result};
use crate::linalg::Matrix;

/// Orthogonality tolerance enforced when a partition is constructed or loaded.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    r: Matrix,
    dims: Vec<usize>,
}

impl Partition {
    pub fn new(r: Matrix, dims: Vec<usize>) -> Result<Self> {
        if r.rows() != r.cols() {
            return Err(NdmError::ShapeMismatch(format!("R must be square, got {:?}", r.shape())));
        }
        validate_dims(&dims, r.rows())?;
        if !r.is_finite() {
            return Err(NdmError::NonFinite("partition matrix"));
        }
        let defect = r.orthogonality_defect();
        if defect > ORTHOGONALITY_TOLERANCE {
            return Err(NdmError::NotOrthogonal(defect));
        }
        Ok(Self { r, dims })
    }

    /// `R = I` with `d / unit` subspaces of size `unit`.
    pub fn identity(d: usize, unit: usize) -> Result<Self> {
        if unit == 0 || d % unit != 0 {
            return Err(NdmError::InvalidConfig(format!("unit size {unit} must divide {d}")));
        }
        Self::new(Matrix::identity(d), vec![unit; d / unit])
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d(&self) -> usize {
        self.r.rows()
    }

    pub fn num_subspaces(&self) -> usize {
        self.dims.len()
    }

    /// Row ranges of `R` (coordinate ranges of `R h`) for each subspace.
    pub fn ranges(&self) -> Vec<Range<usize>> {
        block_ranges(&self.dims)
    }

    pub fn range(&self, s: usize) -> Result<Range<usize>> {
        if s >= self.dims.len() {
            return Err(NdmError::OutOfRange { index: s, len: self.dims.len() });
        }
        let start: usize = self.dims[..s].iter().sum();
        Ok(start..start + self.dims[s])
    }

    /// `R h` for every row `h` of `data`.
    pub fn rotate(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.d() {
            return Err(NdmError::ShapeMismatch(format!(
                "activations have {} columns, partition is over {} dims",
                data.cols(),
                self.d()
            )));
        }
        data.matmul_t(&self.r)
    }

    /// Rotated activations split into per-subspace blocks.
    pub fn subspace_activations(&self, data: &Matrix) -> Result<Vec<Matrix>> {
        subspace_split(&self.rotate(data)?, &self.dims)
    }

    /// Same subspaces with blocks reordered by decreasing dimension
    /// (stable, so equal-sized blocks keep their relative order).
    pub fn sorted_descending(&self) -> Partition {
        let mut order: Vec<usize> = (0..self.dims.len()).collect();
        order.sort_by(|&a, &b| self.dims[b].cmp(&self.dims[a]));
        self.reordered(&order)
    }

    /// Blocks listed in `order` (a permutation of subspace indices).
    pub fn reordered(&self, order: &[usize]) -> Partition {
        let ranges = self.ranges();
        let rows: Vec<usize> = order.iter().flat_map(|&s| ranges[s].clone()).collect();
        Partition { r: self.r.select_rows(&rows), dims: order.iter().map(|&s| self.dims[s]).collect() }
    }
}

pub fn validate_dims(dims: &[usize], d: usize) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) || dims.iter().sum::<usize>() != d {
        return Err(NdmError::BadConfiguration { dims: dims.to_vec(), d });
    }
    Ok(())
}

pub fn block_ranges(dims: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    dims.iter()
        .map(|&n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

/// Contiguous column blocks of `h_hat` in configuration order.
pub fn subspace_split(h_hat: &Matrix, dims: &[usize]) -> Result<Vec<Matrix>> {
    validate_dims(dims, h_hat.cols())?;
    Ok(block_ranges(dims).into_iter().map(|r| h_hat.col_block(r.start, r.len())).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::linalg::random_orthogonal;

    #[test]
    fn split_single_block_is_identity() {
        let h = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let parts = subspace_split(&h, &[3]).unwrap();
        assert_eq!(parts, vec![h]);
    }

    #[test]
    fn split_unit_blocks() {
        let h = Matrix::from_rows(&[vec![3.0, 5.0]]).unwrap();
        let parts = subspace_split(&h, &[1, 1]).unwrap();
        assert_eq!(parts[0].as_slice(), &[3.0]);
        assert_eq!(parts[1].as_slice(), &[5.0]);
    }

    #[test]
    fn split_then_concat_roundtrips() {
        let h = Matrix::from_fn(5, 7, |i, j| (i as f64).sin() + j as f64);
        let parts = subspace_split(&h, &[2, 4, 1]).unwrap();
        assert_eq!(Matrix::hstack(&parts).unwrap(), h);
    }

    #[test]
    fn bad_configuration() {
        let h = Matrix::zeros(2, 4);
        assert!(subspace_split(&h, &[2, 3]).is_err());
        assert!(subspace_split(&h, &[4, 0]).is_err());
        assert!(Partition::identity(6, 4).is_err());
    }

    #[test]
    fn rejects_non_orthogonal() {
        let mut r = Matrix::identity(3);
        r[(0, 1)] = 0.1;
        assert!(matches!(Partition::new(r, vec![3]), Err(NdmError::NotOrthogonal(_))));
    }

    #[test]
    fn sorting_keeps_blocks_intact() {
        let r = random_orthogonal(6, &mut ChaCha8Rng::seed_from_u64(1));
        let p = Partition::new(r, vec![1, 3, 2]).unwrap();
        let sorted = p.sorted_descending();
        assert_eq!(sorted.dims(), &[3, 2, 1]);
        let h = Matrix::from_fn(4, 6, |i, j| (i + 2 * j) as f64);
        let a = p.subspace_activations(&h).unwrap();
        let b = sorted.subspace_activations(&h).unwrap();
        assert_eq!(a[1], b[0]);
        assert_eq!(a[2], b[1]);
        assert_eq!(a[0], b[2]);
    }
}
