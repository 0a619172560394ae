//! Preimage search: exact cosine-similarity scans over per-subspace
//! activation databases, rendered as token contexts.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NdmError, Result};
use crate::io::{ActivationSet, TokenMeta};
use crate::linalg::{dot, norm, Matrix};
use crate::partition::Partition;

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const CONTEXT_BEFORE: usize = 30;
pub const CONTEXT_AFTER: usize = 5;

const PARALLEL_ROWS: usize = 1 << 14;

/// Rotated activations of one subspace with their token metadata.
#[derive(Clone, Debug)]
pub struct SubspaceIndex {
    pub subspace: usize,
    pub vectors: Matrix,
    pub meta: Arc<[TokenMeta]>,
    norms: Vec<f64>,
}

impl SubspaceIndex {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// One index per subspace, rows `R h` split by the configuration.
pub fn build_index(set: &ActivationSet, partition: &Partition) -> Result<Vec<SubspaceIndex>> {
    let meta: Arc<[TokenMeta]> = set
        .meta
        .clone()
        .ok_or_else(|| NdmError::MissingMetadata("preimage search needs per-row token metadata".into()))?
        .into();
    let blocks = partition.subspace_activations(&set.data)?;
    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(subspace, vectors)| {
            let norms = vectors.row_iter().map(norm).collect();
            SubspaceIndex { subspace, vectors, meta: meta.clone(), norms }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryOptions {
    pub threshold: f64,
    pub top_k: usize,
    /// `(doc_id, position)` the query came from; matching rows are flagged.
    pub origin: Option<(u64, u64)>,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, top_k: 20, origin: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreimageHit {
    pub row: usize,
    pub similarity: f64,
    pub doc_id: u64,
    pub position: u64,
    pub token_text: String,
    pub is_self: bool,
}

/// Rows with cosine similarity to `q` at or above the threshold, best first,
/// at most `top_k`. Ties keep row order.
pub fn query(index: &SubspaceIndex, q: &[f64], opts: &QueryOptions) -> Result<Vec<PreimageHit>> {
    if q.len() != index.dim() {
        return Err(NdmError::LengthMismatch { expected: index.dim(), actual: q.len() });
    }
    let qn = norm(q);
    if qn == 0.0 || !qn.is_finite() {
        return Err(NdmError::ZeroNorm);
    }
    let sim = |i: usize| {
        let rn = index.norms[i];
        if rn == 0.0 {
            None
        } else {
            let c = (dot(index.vectors.row(i), q) / (rn * qn)).clamp(-1.0, 1.0);
            (c >= opts.threshold).then_some((i, c))
        }
    };
    let mut found: Vec<(usize, f64)> = if index.len() >= PARALLEL_ROWS {
        (0..index.len()).into_par_iter().filter_map(sim).collect()
    } else {
        (0..index.len()).filter_map(sim).collect()
    };
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(opts.top_k);
    Ok(found
        .into_iter()
        .map(|(row, similarity)| {
            let m = &index.meta[row];
            PreimageHit {
                row,
                similarity,
                doc_id: m.doc_id,
                position: m.position,
                token_text: m.token_text.clone(),
                is_self: opts.origin == Some((m.doc_id, m.position)),
            }
        })
        .collect())
}

/// Query with a stored row as the probe; that row is flagged as the self hit.
pub fn query_row(index: &SubspaceIndex, row: usize, threshold: f64, top_k: usize) -> Result<Vec<PreimageHit>> {
    if row >= index.len() {
        return Err(NdmError::OutOfRange { index: row, len: index.len() });
    }
    let m = &index.meta[row];
    let opts = QueryOptions { threshold, top_k, origin: Some((m.doc_id, m.position)) };
    query(index, index.vectors.row(row), &opts)
}

/// Token text by document and position, for rendering contexts.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    docs: HashMap<u64, Vec<(u64, String)>>,
}

impl Corpus {
    pub fn new(meta: &[TokenMeta]) -> Self {
        let mut docs: HashMap<u64, Vec<(u64, String)>> = HashMap::new();
        for m in meta {
            docs.entry(m.doc_id).or_default().push((m.position, m.token_text.clone()));
        }
        for tokens in docs.values_mut() {
            tokens.sort_by_key(|t| t.0);
            tokens.dedup_by_key(|t| t.0);
        }
        Self { docs }
    }

    /// `(before, token, after)` around a position, up to the given number of
    /// tokens on each side.
    pub fn context(&self, doc_id: u64, position: u64, before: usize, after: usize) -> (String, String, String) {
        let Some(tokens) = self.docs.get(&doc_id) else {
            return (String::new(), String::new(), String::new());
        };
        match tokens.binary_search_by_key(&position, |t| t.0) {
            Ok(i) => {
                let join = |s: &[(u64, String)]| s.iter().map(|t| t.1.as_str()).collect::<String>();
                (
                    join(&tokens[i.saturating_sub(before)..i]),
                    tokens[i].1.clone(),
                    join(&tokens[i + 1..(i + 1 + after).min(tokens.len())]),
                )
            }
            Err(_) => (String::new(), String::new(), String::new()),
        }
    }
}

/// One line per hit: similarity, position, and the context with the source
/// token in `[[…]]`; the self hit is marked with `=`.
pub fn render_hits(hits: &[PreimageHit], corpus: &Corpus) -> String {
    let mut out = format!("{:>6} {:>6}  context\n", "sim", "pos");
    for h in hits {
        let (before, token, after) = corpus.context(h.doc_id, h.position, CONTEXT_BEFORE, CONTEXT_AFTER);
        let mark = if h.is_self { '=' } else { ' ' };
        let text = format!("{before}[[{token}]]{after}").replace('\n', "\\n");
        out.push_str(&format!("{:>6.3}{mark}{:>6}  {text}\n", h.similarity, h.position));
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_1_SQRT_2;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::linalg::random_orthogonal;

    fn meta(n: usize) -> Vec<TokenMeta> {
        (0..n).map(|i| TokenMeta { doc_id: (i / 50) as u64, position: (i % 50) as u64, token_text: format!(" t{i}") }).collect()
    }

    fn set(data: Matrix) -> ActivationSet {
        let n = data.rows();
        ActivationSet::new(data, Some(meta(n))).unwrap()
    }

    fn three_rows() -> SubspaceIndex {
        let data = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]]).unwrap();
        build_index(&set(data), &Partition::identity(2, 2).unwrap()).unwrap().remove(0)
    }

    #[test]
    fn hand_cosines() {
        let idx = three_rows();
        let hits = query(&idx, &[1.0, 0.0], &QueryOptions { threshold: 0.7, top_k: 10, origin: None }).unwrap();
        let got: Vec<(usize, f64)> = hits.iter().map(|h| (h.row, h.similarity)).collect();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], (0, 1.0));
        assert_eq!(got[1].0, 2);
        assert!((got[1].1 - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_finds_nothing() {
        let data = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap();
        let idx = build_index(&set(data), &Partition::identity(3, 3).unwrap()).unwrap().remove(0);
        assert!(query(&idx, &[0.0, 0.0, 1.0], &QueryOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn stored_row_is_self_hit() {
        let idx = three_rows();
        let hits = query_row(&idx, 1, 0.85, 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert!(hits[0].is_self && hits[0].similarity == 1.0);
    }

    #[test]
    fn zero_query_is_an_error() {
        assert!(matches!(query(&three_rows(), &[0.0, 0.0], &QueryOptions::default()), Err(NdmError::ZeroNorm)));
    }

    #[test]
    fn index_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = Matrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
        let p = Partition::new(random_orthogonal(5, &mut rng), vec![3, 2]).unwrap();
        let idx = build_index(&set(data.clone()), &p).unwrap();
        assert_eq!(idx.iter().map(|i| (i.len(), i.dim())).collect::<Vec<_>>(), vec![(7, 3), (7, 2)]);
        let whole = Partition::new(p.r().clone(), vec![5]).unwrap();
        assert_eq!(build_index(&set(data.clone()), &whole).unwrap()[0].vectors, p.rotate(&data).unwrap());
        let empty = build_index(&set(Matrix::zeros(0, 5)), &p).unwrap();
        assert!(empty.len() == 2 && empty.iter().all(|i| i.is_empty()));
        assert!(matches!(
            build_index(&ActivationSet::new(data, None).unwrap(), &p),
            Err(NdmError::MissingMetadata(_))
        ));
    }

    #[test]
    fn rendering_windows() {
        let m = meta(60);
        let corpus = Corpus::new(&m);
        let (before, token, after) = corpus.context(0, 40, CONTEXT_BEFORE, CONTEXT_AFTER);
        assert_eq!(token, " t40");
        assert!(before.starts_with(" t10") && before.ends_with(" t39"));
        assert_eq!(after, " t41 t42 t43 t44 t45");
        let (_, _, tail) = corpus.context(1, 8, 30, 5);
        assert_eq!(tail, " t59");
        let hit = PreimageHit { row: 40, similarity: 0.9, doc_id: 0, position: 40, token_text: " t40".into(), is_self: true };
        assert!(render_hits(&[hit], &corpus).contains("[[ t40]]"));
    }

    fn exhaustive(data: &Matrix, q: &[f64], threshold: f64) -> Vec<usize> {
        let qn = norm(q);
        (0..data.rows())
            .filter(|&i| {
                let rn = norm(data.row(i));
                rn > 0.0 && dot(data.row(i), q) / (rn * qn) >= threshold
            })
            .collect()
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Matrix::from_fn(10_000, 4, |_, _| rng.random_range(-1.0..1.0));
        let idx = build_index(&set(data.clone()), &Partition::identity(4, 4).unwrap()).unwrap().remove(0);
        for _ in 0..5 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut got: Vec<usize> = query(&idx, &q, &QueryOptions { threshold: 0.8, top_k: usize::MAX, origin: None })
                .unwrap()
                .into_iter()
                .map(|h| h.row)
                .collect();
            got.sort_unstable();
            assert_eq!(got, exhaustive(&data, &q, 0.8));
        }
    }

    proptest! {
        #[test]
        fn scaling_and_threshold_monotonicity(
            seed in 0u64..1000,
            scale in 1e-3f64..1e3,
            t in -1.0f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Matrix::from_fn(200, 3, |_, _| rng.random_range(-1.0..1.0));
            let idx = build_index(&set(data), &Partition::identity(3, 3).unwrap()).unwrap().remove(0);
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let opts = QueryOptions { threshold: t, top_k: usize::MAX, origin: None };
            let rows = |q: &[f64], o: &QueryOptions| query(&idx, q, o).unwrap().into_iter().map(|h| h.row).collect::<Vec<_>>();
            let base = rows(&q, &opts);
            let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
            prop_assert_eq!(&rows(&scaled, &opts), &base);
            let lower = rows(&q, &QueryOptions { threshold: t - dt, ..opts });
            prop_assert!(base.iter().all(|r| lower.contains(r)));
        }
    }
}
