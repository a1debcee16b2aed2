use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::tensor::{Matrix, Scalar};
use crate::Result;

/// Destination-index to source-index map of a cloned dimension.
///
/// `map[i]` is the source coordinate that destination coordinate `i`
/// duplicates. Every source coordinate has at least one preimage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneMap {
    dest_size: usize,
    src_size: usize,
    map: Vec<usize>,
}

impl CloneMap {
    pub fn new(src_size: usize, map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; src_size];
        for &s in &map {
            ensure!(s < src_size, "clone map entry {s} out of range {src_size}");
            seen[s] = true;
        }
        ensure!(seen.iter().all(|&b| b), "clone map leaves a source index without a preimage");
        Ok(Self { dest_size: map.len(), src_size, map })
    }

    pub fn identity(n: usize) -> Self {
        Self { dest_size: n, src_size: n, map: (0..n).collect() }
    }

    pub fn dest_size(&self) -> usize {
        self.dest_size
    }

    pub fn src_size(&self) -> usize {
        self.src_size
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn source_of(&self, dest: usize) -> usize {
        self.map[dest]
    }

    pub fn is_identity(&self) -> bool {
        self.dest_size == self.src_size && self.map.iter().enumerate().all(|(i, &s)| i == s)
    }

    /// Number of destination coordinates per source coordinate.
    pub fn preimage_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.src_size];
        for &s in &self.map {
            counts[s] += 1;
        }
        counts
    }

    /// `Some(n)` when every source coordinate has exactly `n` preimages.
    pub fn uniform_fold(&self) -> Option<usize> {
        let counts = self.preimage_counts();
        let n = *counts.first()?;
        counts.iter().all(|&c| c == n).then_some(n)
    }

    /// Destination coordinates grouped by source coordinate, ascending.
    pub fn preimages(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.src_size];
        for (d, &s) in self.map.iter().enumerate() {
            out[s].push(d);
        }
        out
    }

    /// Position of each destination coordinate among the preimages of its
    /// source coordinate (the clone "copy number").
    pub fn ordinals(&self) -> Vec<usize> {
        let mut next = vec![0; self.src_size];
        self.map
            .iter()
            .map(|&s| {
                let o = next[s];
                next[s] += 1;
                o
            })
            .collect()
    }

    /// Clone a vector: `out[i] = x[map[i]]`.
    pub fn apply<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.map.iter().map(|&s| x[s]).collect()
    }

    /// Clone every row of `x` along its columns.
    pub fn apply_cols<T: Scalar>(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        ensure!(x.cols() == self.src_size, "matrix has {} columns, clone map expects {}", x.cols(), self.src_size);
        x.gather_cols(&self.map)
    }
}

/// `fold` stacked copies of a `src_size` dimension: `i ↦ i mod src_size`.
pub fn make_clone_map(src_size: usize, fold: usize) -> CloneMap {
    assert!(fold >= 1, "fold must be at least 1");
    CloneMap { dest_size: src_size * fold, src_size, map: (0..src_size * fold).map(|i| i % src_size).collect() }
}

/// Map of the flattened attention dimension under head-count fold `h` and
/// head-dim fold `k`. Destination heads are contiguous copies: head `j'`
/// clones source head `j' / h`, and its `d_head · k` lanes clone the source
/// lanes `k`-fold stacked.
pub fn make_head_clone_map(n_heads: usize, d_head: usize, h: usize, k: usize) -> CloneMap {
    assert!(h >= 1 && k >= 1, "folds must be at least 1");
    let dest_head = d_head * k;
    let map = (0..n_heads * h * dest_head)
        .map(|i| {
            let (head, lane) = (i / dest_head, i % dest_head);
            (head / h) * d_head + lane % d_head
        })
        .collect();
    CloneMap { dest_size: n_heads * h * dest_head, src_size: n_heads * d_head, map }
}
