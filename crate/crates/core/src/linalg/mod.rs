//! Dense linear algebra, the exponential-map orthogonal parametrization,
//! Adam, and PCA.

mod adam;
mod expm;
mod matrix;
mod pca;

pub use adam::{AdamState, LinearSchedule};
pub use expm::{expm, expm_frechet, orthogonalize, orthogonalize_vjp, SkewParam};
pub use matrix::{axpy, dot, norm, Matrix};
pub use pca::{pca_basis, random_orthogonal, sample_covariance, Pca};
