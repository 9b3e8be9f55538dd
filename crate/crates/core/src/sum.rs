//! Deterministic reductions.
//!
//! Floating sums go through a fixed pairwise tree over fixed-size chunks, so the
//! result does not depend on how rayon schedules the chunks.

use rayon::prelude::*;
use std::ops::Add;

/// Pairwise sum with a tree shape that depends only on `xs.len()`.
pub fn tree_sum<T: Copy + Add<Output = T> + Default>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::default(),
        1 => xs[0],
        n => {
            let mid = n / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

/// Evaluates `f` on consecutive chunks `[k*chunk, min((k+1)*chunk, n))` in parallel
/// and combines the chunk results with [`tree_sum`].
pub fn par_chunked_sum<T, F>(n: u64, chunk: u64, f: F) -> T
where
    T: Copy + Add<Output = T> + Default + Send,
    F: Fn(u64, u64) -> T + Sync,
{
    let chunk = chunk.max(1);
    let nchunks = n.div_ceil(chunk);
    let parts: Vec<T> = (0..nchunks)
        .into_par_iter()
        .map(|k| f(k * chunk, ((k + 1) * chunk).min(n)))
        .collect();
    tree_sum(&parts)
}

/// Integer histogram accumulation over index chunks; merges are exact so any
/// partition gives the same answer.
pub fn par_histogram<F>(n: u64, chunk: u64, bins: usize, f: F) -> Vec<u64>
where
    F: Fn(u64, u64, &mut [u64]) + Sync,
{
    let chunk = chunk.max(1);
    let nchunks = n.div_ceil(chunk);
    (0..nchunks)
        .into_par_iter()
        .map(|k| {
            let mut h = vec![0u64; bins];
            f(k * chunk, ((k + 1) * chunk).min(n), &mut h);
            h
        })
        .reduce(
            || vec![0u64; bins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}
