//! Orthogonal matrices as exponentials of skew-symmetric matrices.
//!
//! `R = exp(A)` with `A = −Aᵀ` is a rotation for every `A`, so unconstrained
//! gradient steps on the free entries of `A` keep `R` on the orthogonal group.
//! The backward pass uses the Fréchet derivative of the exponential, read off
//! the upper-right block of `exp([[Aᵀ, G], [0, Aᵀ]])`.

use super::Matrix;
use crate::error::{NdmError, Result};

/// Free parameters of a skew-symmetric `dim × dim` matrix: the strictly lower
/// triangle in row-major order `(1,0), (2,0), (2,1), (3,0), …`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewParam {
    dim: usize,
    values: Vec<f64>,
}

impl SkewParam {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, values: vec![0.0; Self::param_count(dim)] }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(dim);
        if values.len() != expected {
            return Err(NdmError::LengthMismatch { expected, actual: values.len() });
        }
        Ok(Self { dim, values })
    }

    pub const fn param_count(dim: usize) -> usize {
        dim * dim.saturating_sub(1) / 2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The skew-symmetric matrix `A`; `A = −Aᵀ` holds exactly.
    pub fn to_matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(self.dim, self.dim);
        let mut k = 0;
        for i in 1..self.dim {
            for j in 0..i {
                a[(i, j)] = self.values[k];
                a[(j, i)] = -self.values[k];
                k += 1;
            }
        }
        a
    }

    /// Projects a full `dim × dim` gradient onto the free parameters.
    pub fn project_gradient(&self, grad_a: &Matrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 1..self.dim {
            for j in 0..i {
                out.push(grad_a[(i, j)] - grad_a[(j, i)]);
            }
        }
        out
    }
}

const TAYLOR_MAX_TERMS: usize = 40;
const SCALED_NORM_TARGET: f64 = 0.5;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled so that its 1-norm is at most 0.5; the series is
/// summed until the next term is negligible at double precision.
pub fn expm(m: &Matrix) -> Matrix {
    assert_eq!(m.rows(), m.cols(), "expm needs a square matrix");
    let n = m.rows();
    let norm = m.norm_one();
    let squarings = if norm > SCALED_NORM_TARGET {
        (norm / SCALED_NORM_TARGET).log2().ceil() as i32
    } else {
        0
    };
    let x = m.scale(0.5_f64.powi(squarings));

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=TAYLOR_MAX_TERMS {
        term = term.matmul(&x).expect("square").scale(1.0 / k as f64);
        result.add_assign(&term).expect("square");
        if term.max_abs() <= f64::EPSILON * 1e-3 * result.max_abs().max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result).expect("square");
    }
    result
}

/// `R = exp(A)` for the skew-symmetric `A` held by `p`.
pub fn orthogonalize(p: &SkewParam) -> Matrix {
    expm(&p.to_matrix())
}

/// Fréchet derivative `L(X, E) = d/dt exp(X + tE)` at `t = 0`, via the
/// augmented block matrix `[[X, E], [0, X]]`.
pub fn expm_frechet(x: &Matrix, e: &Matrix) -> Matrix {
    let n = x.rows();
    let mut block = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            block[(i, j)] = x[(i, j)];
            block[(n + i, n + j)] = x[(i, j)];
            block[(i, n + j)] = e[(i, j)];
        }
    }
    let big = expm(&block);
    Matrix::from_fn(n, n, |i, j| big[(i, n + j)])
}

/// Given `∂loss/∂R` for `R = exp(A)`, returns `∂loss/∂p`.
///
/// The adjoint of `E ↦ L(A, E)` under the trace inner product is
/// `G ↦ L(Aᵀ, G)`.
pub fn orthogonalize_vjp(p: &SkewParam, grad_r: &Matrix) -> Result<Vec<f64>> {
    if grad_r.shape() != (p.dim(), p.dim()) {
        return Err(NdmError::ShapeMismatch(format!(
            "gradient {:?} for parameter of dim {}",
            grad_r.shape(),
            p.dim()
        )));
    }
    if grad_r.max_abs() == 0.0 {
        return Ok(vec![0.0; p.values().len()]);
    }
    let a_t = p.to_matrix().transpose();
    let grad_a = expm_frechet(&a_t, grad_r);
    Ok(p.project_gradient(&grad_a))
}
