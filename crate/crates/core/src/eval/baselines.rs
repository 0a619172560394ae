//! Reference partitions that share an NDM dimension configuration.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NdmError, Result};
use crate::linalg::{pca_basis, random_orthogonal, Matrix};
use crate::partition::{validate_dims, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Identity,
    Random,
    /// Eigenvectors by ascending eigenvalue: the last (smallest) block gets
    /// the largest-variance directions.
    Pca1,
    /// Eigenvectors by descending eigenvalue.
    Pca2,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::Identity, Self::Random, Self::Pca1, Self::Pca2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Random => "random",
            Self::Pca1 => "pca1",
            Self::Pca2 => "pca2",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = NdmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NdmError::Parse(format!("unknown baseline {s:?}; expected identity, random, pca1 or pca2")))
    }
}

/// Baseline partition over `data` (one activation per row) with configuration `dims`.
pub fn baseline_partition(kind: BaselineKind, data: &Matrix, dims: &[usize], rng: &mut impl Rng) -> Result<Partition> {
    let d = data.cols();
    validate_dims(dims, d)?;
    let r = match kind {
        BaselineKind::Identity => Matrix::identity(d),
        BaselineKind::Random => random_orthogonal(d, rng),
        BaselineKind::Pca1 | BaselineKind::Pca2 => {
            let pca = pca_basis(data)?;
            let v = pca.eigenvectors.transpose();
            if kind == BaselineKind::Pca2 {
                v
            } else {
                let rev: Vec<usize> = (0..d).rev().collect();
                v.select_rows(&rev)
            }
        }
    };
    Partition::new(r, dims.to_vec())
}

/// Per subspace, the summed sample variance of its rotated coordinates.
pub fn subspace_variances(data: &Matrix, partition: &Partition) -> Result<Vec<f64>> {
    if data.rows() < 2 {
        return Err(NdmError::InsufficientSamples { needed: 1, got: data.rows() });
    }
    let vars = partition.rotate(data)?.column_variances();
    Ok(partition.ranges().into_iter().map(|r| vars[r].iter().sum()).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn anisotropic(n: usize, scales: &[f64], rng: &mut impl Rng) -> Matrix {
        let mix = random_orthogonal(scales.len(), rng);
        let raw = Matrix::from_fn(n, scales.len(), |_, j| scales[j] * rng.sample::<f64, _>(StandardNormal));
        raw.matmul(&mix).unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = anisotropic(10, &[1.0, 2.0, 3.0], &mut rng);
        let p = baseline_partition(BaselineKind::Identity, &data, &[2, 1], &mut rng).unwrap();
        assert_eq!(p.r(), &Matrix::identity(3));
    }

    #[test]
    fn random_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Matrix::zeros(3, 6);
        for _ in 0..100 {
            let p = baseline_partition(BaselineKind::Random, &data, &[3, 2, 1], &mut rng).unwrap();
            assert!(p.r().orthogonality_defect() <= 1e-8);
        }
    }

    #[test]
    fn pca_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = anisotropic(4000, &[5.0, 0.2, 1.0, 0.5, 3.0, 0.1], &mut rng);
        let dims = [3, 2, 1];
        let p1 = baseline_partition(BaselineKind::Pca1, &data, &dims, &mut rng).unwrap();
        let v1 = subspace_variances(&data, &p1).unwrap();
        assert!(v1[2] > v1[0], "{v1:?}");
        assert!((v1[2] - 25.0).abs() < 2.5, "{v1:?}");
        let p2 = baseline_partition(BaselineKind::Pca2, &data, &dims, &mut rng).unwrap();
        let v2 = subspace_variances(&data, &p2).unwrap();
        assert!(v2[0] > v2[2], "{v2:?}");
        assert!((v2[2] - 0.01).abs() < 0.005, "{v2:?}");
    }

    #[test]
    fn isotropic_variances_follow_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Matrix::from_fn(20000, 5, |_, _| rng.sample(StandardNormal));
        let p = Partition::identity(5, 1).unwrap();
        let p = Partition::new(p.r().clone(), vec![2, 3]).unwrap();
        let v = subspace_variances(&data, &p).unwrap();
        assert!((v[0] - 2.0).abs() < 0.1 && (v[1] - 3.0).abs() < 0.1, "{v:?}");
    }

    #[test]
    fn constant_data_has_zero_variance() {
        let data = Matrix::from_fn(5, 3, |_, j| j as f64);
        let p = Partition::identity(3, 1).unwrap();
        assert_eq!(subspace_variances(&data, &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn total_variance_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = anisotropic(500, &[1.0, 4.0, 0.3, 2.0], &mut rng);
        let totals: Vec<f64> = (0..3)
            .map(|_| {
                let p = Partition::new(random_orthogonal(4, &mut rng), vec![1, 3]).unwrap();
                subspace_variances(&data, &p).unwrap().iter().sum()
            })
            .collect();
        let direct: f64 = data.column_variances().iter().sum();
        for t in totals {
            assert!((t - direct).abs() <= 1e-9, "{t} vs {direct}");
        }
    }

    #[test]
    fn parse_names() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("pca3".parse::<BaselineKind>().is_err());
    }
}
