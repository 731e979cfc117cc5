//! Replication-level parallelism. With the `parallel` feature (default)
//! work items map over a rayon pool sized by `jobs`; without it the same
//! API runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every item. `jobs = 0` means "use all cores"; `jobs = 1`
/// forces sequential execution even with the parallel feature enabled.
/// Output order always matches input order.
pub fn map_items<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs == 1 {
            return items.into_iter().map(f).collect();
        }
        if jobs == 0 {
            return items.into_par_iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("failed to build worker pool");
        pool.install(|| items.into_par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        items.into_iter().map(f).collect()
    }
}

/// Sequential reference path, kept available for benchmarks regardless of
/// feature flags.
pub fn map_items_sequential<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}
