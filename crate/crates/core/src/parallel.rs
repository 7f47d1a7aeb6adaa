//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature (default), [`indexed_map`] fans the closure
//! out over the rayon pool; results are collected in index order, so output
//! is bit-identical to the sequential path. [`indexed_map_seq`] is always
//! available and is what the benchmarks compare against.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential map over `0..n`, regardless of features.
pub fn indexed_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt() * 3.0 + i as f64;
        let a = indexed_map(257, f);
        let b = indexed_map_seq(257, f);
        assert_eq!(a, b);
    }
}
