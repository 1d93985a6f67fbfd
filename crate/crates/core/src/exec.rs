//! Execution strategy for the data-parallel inner loops.
//!
//! Every parallel loop in this crate works on fixed-size chunks whose
//! boundaries depend only on the input length, and partial results are
//! combined with a pairwise tree in chunk order. The floating-point result
//! is therefore bit-identical between [`Execution::Sequential`] and
//! [`Execution::Parallel`], and independent of the rayon thread count.

use serde::{Deserialize, Serialize};

/// Points per reduction chunk in the EM sums.
pub const REDUCTION_CHUNK: usize = 1024;

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled; falls back to
    /// sequential execution otherwise.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when this strategy will actually run on the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Applies `f` to each `(chunk_index, chunk)` of `data` and returns the
/// results in chunk order.
pub fn map_chunks<T, R, F>(exec: Execution, data: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return data
            .par_chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    let _ = exec;
    data.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Mutable counterpart of [`map_chunks`]: runs `f` on each chunk of `data`
/// in place.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Runs `f` over matching chunks of two slices: `chunk` items of `input`
/// and `chunk * stride` items of `output`. Returns per-chunk results in
/// chunk order.
pub fn zip_chunks_mut<T, U, R, F>(
    exec: Execution,
    input: &[T],
    output: &mut [U],
    chunk: usize,
    stride: usize,
    f: F,
) -> Vec<R>
where
    T: Sync,
    U: Send,
    R: Send,
    F: Fn(usize, &[T], &mut [U]) -> R + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    assert_eq!(input.len() * stride, output.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return input
            .par_chunks(chunk)
            .zip(output.par_chunks_mut(chunk * stride))
            .enumerate()
            .map(|(i, (a, b))| f(i, a, b))
            .collect();
    }
    let _ = exec;
    input
        .chunks(chunk)
        .zip(output.chunks_mut(chunk * stride))
        .enumerate()
        .map(|(i, (a, b))| f(i, a, b))
        .collect()
}

/// Runs `f` over `items` and collects results in input order.
pub fn map_items<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Pairwise tree reduction in a fixed order: neighbours `(0,1), (2,3), ...`
/// are combined level by level. Returns `None` for an empty input.
pub fn tree_reduce<T, F>(mut items: Vec<T>, combine: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Sums `values` with a fixed chunked pairwise order.
pub fn deterministic_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values
        .chunks(REDUCTION_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    tree_reduce(partials, |a, b| a + b).unwrap_or(0.0)
}
