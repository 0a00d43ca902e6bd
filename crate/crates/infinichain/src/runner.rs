//! Deterministic parallel Monte Carlo helpers.
//!
//! Replicas are embarrassingly parallel and identified by index; results
//! are collected in index order, so the merged output is byte-identical
//! for any worker count.

use rayon::prelude::*;

/// Maps `f` over replica indices `0..n`, in parallel on `workers` threads
/// (`0` = rayon's default pool, `1` = inline sequential). The returned
/// vector is ordered by replica index regardless of scheduling.
pub fn parallel_map<T, F>(n: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    if workers == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool");
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}
