//! Batch-level data parallelism.
//!
//! Work is split into fixed-size chunks whose layout does not depend on the
//! thread count, and chunk results are always combined in index order. The
//! rayon path and the sequential path therefore produce bitwise-identical
//! results.

use std::ops::Range;

/// Samples per work chunk.
pub const CHUNK_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon thread pool. Falls back to sequential when built without the
    /// `parallel` feature.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over consecutive `CHUNK_SIZE` ranges of `0..n`, in order.
    pub fn map_chunks<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let ranges: Vec<Range<usize>> = (0..n)
            .step_by(CHUNK_SIZE)
            .map(|start| start..(start + CHUNK_SIZE).min(n))
            .collect();
        self.map(ranges, f)
    }

    /// Order-preserving map over owned items.
    pub fn map<I, T, F>(self, items: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }
}
