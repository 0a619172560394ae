use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{NdmError, Result};

/// Eigendecomposition of a sample covariance.
#[derive(Clone, Debug)]
pub struct Pca {
    /// Eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: Matrix,
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Unbiased covariance of the rows of `data` around their mean.
pub fn sample_covariance(data: &Matrix) -> Result<Matrix> {
    if data.rows() < 2 {
        return Err(NdmError::InsufficientSamples { needed: 1, got: data.rows() });
    }
    if !data.is_finite() {
        return Err(NdmError::NonFinite("covariance input"));
    }
    let means = data.column_means();
    let centered = Matrix::from_fn(data.rows(), data.cols(), |i, j| data[(i, j)] - means[j]);
    let mut cov = centered.t_matmul(&centered)?;
    cov.scale_in_place(1.0 / (data.rows() - 1) as f64);
    Ok(cov)
}

pub fn pca_basis(data: &Matrix) -> Result<Pca> {
    let cov = sample_covariance(data)?;
    let eig = nalgebra::SymmetricEigen::new(to_na(&cov));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = from_na(&eig.eigenvectors);
    let eigenvectors = Matrix::from_fn(vecs.rows(), vecs.cols(), |i, j| vecs[(i, order[j])]);
    Ok(Pca { eigenvalues, eigenvectors })
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    from_na(&q)
}
