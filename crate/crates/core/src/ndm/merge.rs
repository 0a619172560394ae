//! Merging dependent subspaces and the largest-loss re-initialization used in
//! the toy setting.

use rand::Rng;

use crate::error::{NdmError, Result};
use crate::linalg::{random_orthogonal, Matrix};
use crate::mi::MiMatrix;
use crate::partition::Partition;

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub partition: Partition,
    /// Merged pairs, as indices into the partition before merging.
    pub pairs: Vec<(usize, usize)>,
    pub stop: bool,
}

/// Non-intersecting pairs with normalized MI above `tau`, best first, at most
/// `⌈S/8⌉` of them.
pub fn select_merge_pairs(mi: &MiMatrix, tau: f64) -> Vec<(usize, usize)> {
    let s = mi.num_subspaces();
    let mut candidates: Vec<(usize, usize, f64)> = (0..s)
        .flat_map(|i| (i + 1..s).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, mi.normalized[(i, j)]))
        .filter(|&(_, _, v)| v > tau)
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let cap = s.div_ceil(8);
    let mut used = vec![false; s];
    let mut pairs = Vec::new();
    for (i, j, _) in candidates {
        if pairs.len() == cap {
            break;
        }
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Merges the selected pairs. Each merged pair becomes one block at the
/// position of its first member; rows of `R` are permuted to keep blocks
/// contiguous.
pub fn merge_step(mi: &MiMatrix, partition: &Partition, tau: f64) -> Result<MergeOutcome> {
    if mi.num_subspaces() != partition.num_subspaces() {
        return Err(NdmError::LengthMismatch { expected: partition.num_subspaces(), actual: mi.num_subspaces() });
    }
    let pairs = select_merge_pairs(mi, tau);
    if pairs.is_empty() {
        return Ok(MergeOutcome { partition: partition.clone(), pairs, stop: true });
    }
    let ranges = partition.ranges();
    let mut partner = vec![None; partition.num_subspaces()];
    for &(i, j) in &pairs {
        partner[i] = Some(j);
        partner[j] = Some(usize::MAX);
    }
    let mut rows = Vec::with_capacity(partition.d());
    let mut dims = Vec::new();
    for (s, p) in partner.iter().enumerate() {
        match *p {
            Some(usize::MAX) => {}
            Some(j) => {
                rows.extend(ranges[s].clone());
                rows.extend(ranges[j].clone());
                dims.push(ranges[s].len() + ranges[j].len());
            }
            None => {
                rows.extend(ranges[s].clone());
                dims.push(ranges[s].len());
            }
        }
    }
    let merged = Partition::new(partition.r().select_rows(&rows), dims)?;
    Ok(MergeOutcome { partition: merged, pairs, stop: false })
}

/// Index of the first maximal entry.
pub fn largest(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, &l)| if l > values[best] { i } else { best })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reinit {
    pub partition: Partition,
    /// Subspace with the largest loss.
    pub target: usize,
    pub partner: usize,
}

/// Remixes the largest-loss subspace with a partner drawn with probability
/// proportional to `MI(target, other) × loss(other)`. Both blocks of rows are
/// left-multiplied by one random orthogonal matrix.
pub fn toy_reinit(partition: &Partition, losses: &[f64], mi: &MiMatrix, rng: &mut impl Rng) -> Result<Reinit> {
    let s = partition.num_subspaces();
    if s < 2 {
        return Err(NdmError::InvalidConfig("re-initialization needs at least two subspaces".into()));
    }
    if losses.len() != s {
        return Err(NdmError::LengthMismatch { expected: s, actual: losses.len() });
    }
    if mi.num_subspaces() != s {
        return Err(NdmError::LengthMismatch { expected: s, actual: mi.num_subspaces() });
    }
    let target = largest(losses);
    let weights: Vec<f64> = (0..s)
        .map(|o| if o == target { 0.0 } else { (mi.raw[(target, o)] * losses[o]).max(0.0) })
        .collect();
    let total: f64 = weights.iter().sum();
    let partner = if total > 0.0 && total.is_finite() {
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (o, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                pick = Some(o);
                if u < w {
                    break;
                }
                u -= w;
            }
        }
        pick.expect("positive total weight")
    } else {
        let o = rng.random_range(0..s - 1);
        if o >= target {
            o + 1
        } else {
            o
        }
    };

    let ranges = partition.ranges();
    let (ra, rb) = (ranges[target].clone(), ranges[partner].clone());
    let r = partition.r();
    let stacked = Matrix::vstack(&[r.row_block(ra.start, ra.len()), r.row_block(rb.start, rb.len())])?;
    let q = random_orthogonal(ra.len() + rb.len(), rng);
    let mixed = q.matmul(&stacked)?;
    let mut new_r = r.clone();
    new_r.set_row_block(ra.start, &mixed.row_block(0, ra.len()))?;
    new_r.set_row_block(rb.start, &mixed.row_block(ra.len(), rb.len()))?;
    let partition = Partition::new(new_r, partition.dims().to_vec())?;
    Ok(Reinit { partition, target, partner })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn mi_with(s: usize, entries: &[(usize, usize, f64)], dims: Vec<usize>) -> MiMatrix {
        let mut raw = Matrix::zeros(s, s);
        let mut normalized = Matrix::zeros(s, s);
        for &(i, j, v) in entries {
            raw[(i, j)] = v;
            raw[(j, i)] = v;
            let nv = v / (dims[i] + dims[j]) as f64;
            normalized[(i, j)] = nv;
            normalized[(j, i)] = nv;
        }
        MiMatrix { raw, normalized, dims, sample_n: 0, k: 3, degenerate: vec![] }
    }

    #[test]
    fn nothing_above_threshold_stops() {
        let p = Partition::identity(6, 2).unwrap();
        let mi = mi_with(3, &[(0, 1, 0.16)], vec![2, 2, 2]);
        let out = merge_step(&mi, &p, 0.04).unwrap();
        assert!(out.stop);
        assert_eq!(out.partition, p);
    }

    #[test]
    fn two_subspaces_merge() {
        let p = Partition::new(Matrix::identity(5), vec![3, 2]).unwrap();
        let mi = mi_with(2, &[(0, 1, 0.25)], vec![3, 2]);
        let out = merge_step(&mi, &p, 0.04).unwrap();
        assert!(!out.stop);
        assert_eq!(out.partition.dims(), &[5]);
        assert_eq!(out.pairs, vec![(0, 1)]);
    }

    #[test]
    fn cap_is_ceiling_of_s_over_eight() {
        let p = Partition::identity(32, 2).unwrap();
        let entries: Vec<_> = (0..5).map(|k| (2 * k, 2 * k + 1, 1.0 + k as f64)).collect();
        let mi = mi_with(16, &entries, vec![2; 16]);
        let out = merge_step(&mi, &p, 0.04).unwrap();
        assert_eq!(out.pairs, vec![(8, 9), (6, 7)]);
        assert_eq!(out.partition.num_subspaces(), 14);
    }

    #[test]
    fn pairs_do_not_intersect() {
        let dims = vec![1; 17];
        let mi = mi_with(17, &[(0, 1, 0.9), (1, 2, 0.8), (2, 3, 0.7), (4, 5, 0.1)], dims);
        assert_eq!(select_merge_pairs(&mi, 0.04), vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn merged_rows_stay_contiguous() {
        let r = Matrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 0.0 });
        let p = Partition::new(r, vec![2, 2, 2]).unwrap();
        let mi = mi_with(3, &[(0, 2, 0.5)], vec![2, 2, 2]);
        let out = merge_step(&mi, &p, 0.04).unwrap();
        assert_eq!(out.partition.dims(), &[4, 2]);
        let rows: Vec<usize> = (0..6)
            .map(|i| out.partition.r().row(i).iter().position(|&v| v == 1.0).unwrap())
            .collect();
        assert_eq!(rows, vec![0, 1, 4, 5, 2, 3]);
    }

    #[test]
    fn reinit_two_subspaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Partition::new(random_orthogonal(5, &mut rng), vec![3, 2]).unwrap();
        let mi = mi_with(2, &[], vec![3, 2]);
        let out = toy_reinit(&p, &[0.1, 0.7], &mi, &mut rng).unwrap();
        assert_eq!((out.target, out.partner), (1, 0));
        assert!(out.partition.r().orthogonality_defect() <= 1e-8);
        // the pair spans the whole space, so the union of rows is unchanged
        let before = p.r().t_matmul(p.r()).unwrap();
        let after = out.partition.r().t_matmul(out.partition.r()).unwrap();
        assert!(before.sub(&after).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn reinit_partner_follows_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Partition::identity(8, 2).unwrap();
        // target is 3; only subspace 1 has both MI and loss
        let mi = mi_with(4, &[(3, 0, 0.5), (3, 1, 0.5), (3, 2, 0.0)], vec![2; 4]);
        for _ in 0..20 {
            let out = toy_reinit(&p, &[0.0, 0.5, 0.4, 0.9], &mi, &mut rng).unwrap();
            assert_eq!((out.target, out.partner), (3, 1));
            let ranges = p.ranges();
            // untouched rows keep their values
            for s in [0, 2] {
                for row in ranges[s].clone() {
                    assert_eq!(out.partition.r().row(row), p.r().row(row));
                }
            }
        }
    }

    #[test]
    fn reinit_uniform_when_weights_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Partition::identity(6, 2).unwrap();
        let mi = mi_with(3, &[], vec![2; 3]);
        let mut seen = [0; 3];
        for _ in 0..200 {
            let out = toy_reinit(&p, &[1.0, 0.5, 0.2], &mi, &mut rng).unwrap();
            seen[out.partner] += 1;
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1] > 60 && seen[2] > 60, "{seen:?}");
    }
}
