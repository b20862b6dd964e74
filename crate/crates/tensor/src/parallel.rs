//! Batch-level data parallelism.
//!
//! With the `parallel` feature the helpers fan work out over rayon; without
//! it they run the same closures in order. Reductions always use a fixed
//! grouping, so both builds produce bit-identical results regardless of
//! the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per partial sum in [`reduce_groups`].
pub const REDUCTION_GROUP: usize = 4;

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `out`.
pub fn for_each_chunk<F>(out: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sums `len`-long contributions of samples `0..n` into one vector.
///
/// Samples are accumulated sequentially inside groups of
/// [`REDUCTION_GROUP`]; group partials are then added in group order.
pub fn reduce_groups<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let groups = n.div_ceil(REDUCTION_GROUP);
    let partials = map_indices(groups, |g| {
        let mut acc = vec![0.0; len];
        let start = g * REDUCTION_GROUP;
        for i in start..(start + REDUCTION_GROUP).min(n) {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Whether this build fans work out across threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_matches_plain_sum() {
        let total = reduce_groups(11, 2, |i, acc| {
            acc[0] += i as f64;
            acc[1] += 1.0;
        });
        assert_eq!(total, vec![55.0, 11.0]);
    }

    #[test]
    fn chunks_see_their_index() {
        let mut v = vec![0.0; 6];
        for_each_chunk(&mut v, 2, |i, c| c.fill(i as f64));
        assert_eq!(v, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
