//! Data-parallel helpers that fall back to plain iteration when the
//! `parallel` feature is disabled.
//!
//! Results are always collected in input order, so callers that reduce them
//! sequentially get the same numbers regardless of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "FOLVEC_THREADS";

/// Maps `f` over `items`, in parallel when enabled. Output order matches input.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps over an index range.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Sequential reference for [`map`], used by benches and tests.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Configures the global worker pool from `FOLVEC_THREADS` (or `threads` when
/// given). Returns the worker count in effect. Only the first call has an
/// effect.
pub fn init_threads(threads: Option<usize>) -> usize {
    let requested = threads.or_else(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok())
    });
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested.filter(|&n| n > 0) {
            // Fails harmlessly if the pool was already built.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        1
    }
}
