use std::sync::Arc;

use crate::error::{NdmError, Result};
use crate::linalg::Matrix;

/// Rows drawn from a buffer along with their indices in the backing set.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub data: Matrix,
    pub rows: Vec<usize>,
}

/// Streaming view over a fixed activation set.
///
/// `pop` hands out each row at most once (per epoch when recycling is on);
/// `next` cycles over every row, popped or not.
#[derive(Clone, Debug)]
pub struct ActivationBuffer {
    backing: Arc<Matrix>,
    pop_cursor: usize,
    next_cursor: usize,
    recycle: bool,
    epochs: usize,
}

impl ActivationBuffer {
    pub fn new(backing: impl Into<Arc<Matrix>>) -> Self {
        Self { backing: backing.into(), pop_cursor: 0, next_cursor: 0, recycle: false, epochs: 0 }
    }

    /// When set, an exhausted `pop` starts a new pass over the backing set
    /// instead of failing.
    pub fn with_recycle(mut self, recycle: bool) -> Self {
        self.recycle = recycle;
        self
    }

    pub fn backing(&self) -> &Matrix {
        &self.backing
    }

    pub fn len(&self) -> usize {
        self.backing.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.backing.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.backing.cols()
    }

    pub fn remaining(&self) -> usize {
        self.len() - self.pop_cursor
    }

    /// Completed passes of `pop` over the backing set.
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn pop(&mut self, count: usize) -> Result<Batch> {
        if count > self.remaining() {
            if self.recycle && count <= self.len() {
                self.pop_cursor = 0;
                self.epochs += 1;
            } else {
                return Err(NdmError::BufferExhausted { requested: count, remaining: self.remaining() });
            }
        }
        let start = self.pop_cursor;
        self.pop_cursor += count;
        Ok(Batch { data: self.backing.row_block(start, count), rows: (start..start + count).collect() })
    }

    pub fn next(&mut self, count: usize) -> Result<Batch> {
        let n = self.len();
        if n == 0 {
            return Err(NdmError::EmptyBuffer);
        }
        let rows: Vec<usize> = (0..count).map(|k| (self.next_cursor + k) % n).collect();
        self.next_cursor = (self.next_cursor + count) % n;
        Ok(Batch { data: self.backing.select_rows(&rows), rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> ActivationBuffer {
        ActivationBuffer::new(Matrix::from_fn(5, 1, |i, _| i as f64))
    }

    #[test]
    fn pop_exhausts() {
        let mut b = five();
        assert_eq!(b.pop(2).unwrap().rows, vec![0, 1]);
        assert_eq!(b.pop(2).unwrap().rows, vec![2, 3]);
        assert!(matches!(b.pop(2), Err(NdmError::BufferExhausted { requested: 2, remaining: 1 })));
    }

    #[test]
    fn next_wraps() {
        let mut b = five();
        let batch = b.next(7).unwrap();
        assert_eq!(batch.rows, vec![0, 1, 2, 3, 4, 0, 1]);
        assert_eq!(batch.data.column(0), vec![0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 1.0]);
    }

    #[test]
    fn next_sees_popped_rows() {
        let mut b = five();
        b.pop(3).unwrap();
        assert_eq!(b.next(2).unwrap().rows, vec![0, 1]);
    }

    #[test]
    fn pop_yields_each_row_once_in_order() {
        let mut b = ActivationBuffer::new(Matrix::from_fn(12, 2, |i, j| (i * 2 + j) as f64));
        let mut seen = Vec::new();
        while let Ok(batch) = b.pop(4) {
            seen.extend(batch.rows);
        }
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn next_visits_each_row_k_times() {
        let (n, count, k) = (7, 3, 4);
        let mut b = ActivationBuffer::new(Matrix::zeros(n, 1));
        let calls = (k * n).div_ceil(count);
        let mut hits = vec![0; n];
        let mut total = 0;
        for _ in 0..calls {
            for r in b.next(count).unwrap().rows {
                if total < k * n {
                    hits[r] += 1;
                }
                total += 1;
            }
        }
        assert!(hits.iter().all(|h| *h == k), "{hits:?}");
    }

    #[test]
    fn recycle_starts_new_epoch() {
        let mut b = five().with_recycle(true);
        b.pop(4).unwrap();
        assert_eq!(b.pop(2).unwrap().rows, vec![0, 1]);
        assert_eq!(b.epochs(), 1);
        assert!(b.pop(6).is_err());
    }

    #[test]
    fn empty_next_fails() {
        let mut b = ActivationBuffer::new(Matrix::zeros(0, 3));
        assert!(matches!(b.next(1), Err(NdmError::EmptyBuffer)));
    }
}
