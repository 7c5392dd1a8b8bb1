//! Data-parallel helpers.
//!
//! With the `parallel` feature these fan out over rayon's pool; without it
//! they run the same closures in index order. Results are always collected
//! in index order, so outputs do not depend on the thread count.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether this build fans work out over a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Run `f` on a pool with `threads` workers (`None` = all cores).
///
/// Sequential builds ignore the thread count.
#[cfg(feature = "parallel")]
pub fn install<R, F>(threads: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::invalid("thread count", "must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
pub fn install<R, F>(threads: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if threads == Some(0) {
        return Err(Error::invalid("thread count", "must be at least 1"));
    }
    Ok(f())
}

const PAIRWISE_LEAF: usize = 16;

/// Sum with a fixed binary reduction tree.
///
/// The tree depends only on `values.len()`, so the result is bit-identical
/// for identical input slices on every platform and thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
