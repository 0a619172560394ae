//! Gradient-free nearest-neighbor search inside subspaces.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NdmError, Result};
use crate::linalg::{dot, norm, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    OneMinusCosine,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::OneMinusCosine => {
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / (na * nb)
                }
            }
        }
    }
}

/// Nearest pool row for each query row.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbors {
    /// Pool identifiers of the winners.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Streaming scan over pool blocks, keeping a running minimum per query.
///
/// `query` and pool blocks are already projected into the subspace. Each
/// pool block comes with the identifiers of its rows. When `query_ids` is
/// given, a pool row carrying the same identifier as the query is skipped.
pub fn nearest_in_subspace<I>(
    query: &Matrix,
    query_ids: Option<&[usize]>,
    pool: I,
    metric: Distance,
) -> Result<Neighbors>
where
    I: IntoIterator<Item = (Matrix, Vec<usize>)>,
{
    if let Some(ids) = query_ids {
        if ids.len() != query.rows() {
            return Err(NdmError::LengthMismatch { expected: query.rows(), actual: ids.len() });
        }
    }
    let b = query.rows();
    let mut best = Neighbors { indices: vec![usize::MAX; b], distances: vec![f64::INFINITY; b] };
    for (block, ids) in pool {
        if block.cols() != query.cols() {
            return Err(NdmError::ShapeMismatch(format!(
                "pool block has {} columns, query has {}",
                block.cols(),
                query.cols()
            )));
        }
        if ids.len() != block.rows() {
            return Err(NdmError::LengthMismatch { expected: block.rows(), actual: ids.len() });
        }
        for i in 0..b {
            let q = query.row(i);
            let own = query_ids.map(|ids| ids[i]);
            for (j, &id) in ids.iter().enumerate() {
                if own == Some(id) {
                    continue;
                }
                let dist = metric.eval(q, block.row(j));
                if dist < best.distances[i] {
                    best.distances[i] = dist;
                    best.indices[i] = id;
                }
            }
        }
    }
    if best.indices.contains(&usize::MAX) {
        return Err(NdmError::EmptyBuffer);
    }
    Ok(best)
}

/// Per-subspace neighbors for a batch, stored as raw (unrotated) rows.
#[derive(Clone, Debug)]
pub(crate) struct SubspaceNeighbors {
    /// `rows[s]` is `b × d`: raw neighbor of each query under subspace `s`.
    pub rows: Vec<Matrix>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub ids: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

struct QueryBest {
    dist: Vec<f64>,
    id: Vec<usize>,
    raw: Vec<f64>,
}

fn scan_block(
    best: &mut QueryBest,
    q_hat: &[f64],
    own: usize,
    block_raw: &Matrix,
    block_hat: &Matrix,
    ids: &[usize],
    ranges: &[std::ops::Range<usize>],
    metric: Distance,
) {
    let d = block_raw.cols();
    for (j, &id) in ids.iter().enumerate() {
        if id == own {
            continue;
        }
        let p_hat = block_hat.row(j);
        for (s, r) in ranges.iter().enumerate() {
            let dist = metric.eval(&q_hat[r.clone()], &p_hat[r.clone()]);
            if dist < best.dist[s] {
                best.dist[s] = dist;
                best.id[s] = id;
                best.raw[s * d..(s + 1) * d].copy_from_slice(block_raw.row(j));
            }
        }
    }
}

fn collect(bests: Vec<QueryBest>, s_count: usize, d: usize) -> Result<SubspaceNeighbors> {
    let b = bests.len();
    let mut rows = vec![Matrix::zeros(b, d); s_count];
    let mut ids = vec![vec![0; b]; s_count];
    let mut distances = vec![vec![0.0; b]; s_count];
    for (i, q) in bests.into_iter().enumerate() {
        for s in 0..s_count {
            if q.id[s] == usize::MAX {
                return Err(NdmError::InsufficientSamples { needed: 2, got: 1 });
            }
            rows[s].row_mut(i).copy_from_slice(&q.raw[s * d..(s + 1) * d]);
            ids[s][i] = q.id[s];
            distances[s][i] = q.dist[s];
        }
    }
    Ok(SubspaceNeighbors { rows, ids, distances })
}

fn fresh(s_count: usize, d: usize) -> QueryBest {
    QueryBest { dist: vec![f64::INFINITY; s_count], id: vec![usize::MAX; s_count], raw: vec![0.0; s_count * d] }
}

const PARALLEL_WORK: usize = 1 << 16;

/// Neighbors of each query among pool blocks drawn on demand, for every
/// subspace at once. Blocks are projected under `r` once and scanned in turn.
pub(crate) fn search_stream(
    queries: &Matrix,
    query_ids: &[usize],
    r: &Matrix,
    ranges: &[std::ops::Range<usize>],
    mut next_block: impl FnMut() -> Result<(Matrix, Vec<usize>)>,
    blocks: usize,
    metric: Distance,
) -> Result<SubspaceNeighbors> {
    let (b, d) = queries.shape();
    let q_hat = queries.matmul_t(r)?;
    let mut bests: Vec<QueryBest> = (0..b).map(|_| fresh(ranges.len(), d)).collect();
    for _ in 0..blocks {
        let (raw, ids) = next_block()?;
        let hat = raw.matmul_t(r)?;
        let scan = |(i, best): (usize, &mut QueryBest)| {
            scan_block(best, q_hat.row(i), query_ids[i], &raw, &hat, &ids, ranges, metric)
        };
        if b * raw.rows() * d >= PARALLEL_WORK {
            bests.par_iter_mut().enumerate().for_each(scan);
        } else {
            bests.iter_mut().enumerate().for_each(scan);
        }
    }
    collect(bests, ranges.len(), d)
}

/// Each query looks at `candidates` other rows of its own batch, drawn
/// uniformly without replacement.
pub(crate) fn search_in_batch(
    batch: &Matrix,
    r: &Matrix,
    ranges: &[std::ops::Range<usize>],
    candidates: usize,
    metric: Distance,
    rng: &mut impl Rng,
) -> Result<SubspaceNeighbors> {
    let (b, d) = batch.shape();
    if b < 2 {
        return Err(NdmError::InsufficientSamples { needed: 2, got: b });
    }
    let k = candidates.min(b - 1);
    let hat = batch.matmul_t(r)?;
    let mut bests = Vec::with_capacity(b);
    for i in 0..b {
        let mut best = fresh(ranges.len(), d);
        for c in sample(rng, b - 1, k) {
            let j = if c < i { c } else { c + 1 };
            for (s, range) in ranges.iter().enumerate() {
                let dist = metric.eval(&hat.row(i)[range.clone()], &hat.row(j)[range.clone()]);
                if dist < best.dist[s] {
                    best.dist[s] = dist;
                    best.id[s] = j;
                    best.raw[s * d..(s + 1) * d].copy_from_slice(batch.row(j));
                }
            }
        }
        bests.push(best);
    }
    collect(bests, ranges.len(), d)
}
