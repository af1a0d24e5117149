//! Index-parallel map that falls back to a plain loop without the `parallel` feature.
//!
//! Results come back in index order either way, so callers that reduce them
//! sequentially get the same answer regardless of scheduling.

pub(crate) fn map_indices<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
