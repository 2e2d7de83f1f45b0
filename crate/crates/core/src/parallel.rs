//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the items are spread over the rayon pool,
//! otherwise they run in order on the calling thread. Results come back in
//! item order either way, and every item is computed identically, so
//! outputs do not depend on the feature or the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Whether this build spreads work over threads.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
