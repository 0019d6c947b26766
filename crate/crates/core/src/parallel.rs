//! Order-stable parallel reductions.
//!
//! Work is cut into fixed-size blocks independent of the thread count, and
//! partial results are combined serially in block order, so floating-point
//! sums come out bit-identical whether one worker or many ran them.

use std::ops::Range;

use rayon::prelude::*;

pub const BLOCK: usize = 512;

/// Evaluates `f` on consecutive ranges of `0..n`, returning results in range order.
pub fn map_blocks<T, F>(n: usize, block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let block = block.max(1);
    let blocks = n.div_ceil(block);
    (0..blocks)
        .into_par_iter()
        .map(|b| f(b * block..((b + 1) * block).min(n)))
        .collect()
}

/// Sum of `f(i)` over `0..n` with a thread-count independent association order.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_blocks(n, BLOCK, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// Element-wise vector sum of `f(i)` over `0..n`, deterministic like [`sum`].
pub fn vec_sum<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let partials = map_blocks(n, BLOCK, |r| {
        let mut acc = vec![0.0; dim];
        for i in r {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; dim];
    for p in partials {
        total.iter_mut().zip(p).for_each(|(t, x)| *t += x);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_match_across_pool_sizes() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / 3.0;
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sum(100_000, f));
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| sum(100_000, f));
        assert_eq!(one.to_bits(), many.to_bits());
    }
}
