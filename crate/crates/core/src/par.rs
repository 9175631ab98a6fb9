//! Data-parallel execution helpers.
//!
//! Every bulk loop in the crate (certificate tables, transition rows, value
//! iteration backups, Monte Carlo episodes) is phrased as an indexed map so
//! the work items are independent and the output order is fixed. With the
//! `parallel` feature the dispatching variants run on the rayon pool;
//! without it they alias the sequential ones. Each work item performs the
//! same arithmetic in the same order either way, so artifacts are
//! bit-identical across feature settings and thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sizes the global worker pool (callable once, before any parallel work).
#[cfg(feature = "parallel")]
pub fn build_global_pool(threads: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
}

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Sequential reference path; the benches compare this against
/// [`map_indexed`] on the real workloads.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let a = map_indexed(1000, |i| (i as f64).sin());
        let b = map_indexed_seq(1000, |i| (i as f64).sin());
        assert_eq!(a, b);
    }
}
