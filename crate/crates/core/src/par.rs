//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper produces bit-identical results with or without the `parallel`
//! feature and for any worker count: row kernels write disjoint memory and
//! reductions sum fixed-size chunks in a fixed order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many entries, kernels stay on the calling thread.
pub const PAR_MIN_LEN: usize = 1 << 15;

/// Chunk length of deterministic reductions.
const REDUCE_CHUNK: usize = 4096;

/// How ensembles and benchmarks schedule work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Applies `f(row_index, row)` to consecutive rows of length `row_len`.
pub fn for_each_row<F>(data: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(row_len > 0 && data.len().is_multiple_of(row_len));
    #[cfg(feature = "parallel")]
    if data.len() >= PAR_MIN_LEN {
        data.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(j, row)| f(j, row));
        return;
    }
    data.chunks_mut(row_len)
        .enumerate()
        .for_each(|(j, row)| f(j, row));
}

fn chunked_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(std::ops::Range<usize>) -> f64 + Sync + Send,
{
    let n_chunks = len.div_ceil(REDUCE_CHUNK);
    let chunk = |c: usize| f(c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(len));
    #[cfg(feature = "parallel")]
    if len >= PAR_MIN_LEN {
        let partial: Vec<f64> = (0..n_chunks).into_par_iter().map(chunk).collect();
        return partial.iter().sum();
    }
    (0..n_chunks).map(chunk).sum()
}

/// Deterministic dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    chunked_sum(a.len(), |r| {
        // Four interleaved accumulators break the add dependency chain.
        let (a, b) = (&a[r.clone()], &b[r]);
        let mut acc = [0.0; 4];
        let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
        let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
        for (x, y) in ca.zip(cb) {
            for l in 0..4 {
                acc[l] += x[l] * y[l];
            }
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    })
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if y.len() >= PAR_MIN_LEN {
        y.par_iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
        return;
    }
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Maps `f` over `0..n` on the requested executor, preserving order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let naive: f64 = a.iter().map(|x| x * x).sum();
        assert!((dot(&a, &a) - naive).abs() <= 1e-14 * naive);
    }

    #[test]
    fn dot_is_order_stable_on_large_input() {
        let a: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
        let first = dot(&a, &a);
        for _ in 0..3 {
            assert_eq!(dot(&a, &a).to_bits(), first.to_bits());
        }
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(50, Execution::Parallel, |i| i * 2);
        assert_eq!(v, (0..50).map(|i| i * 2).collect::<Vec<_>>());
        assert_eq!(v, map_indexed(50, Execution::Sequential, |i| i * 2));
    }
}
