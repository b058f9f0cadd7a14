//! Feature-switched execution of embarrassingly parallel index loops.
//!
//! With the `parallel` feature (default) the loops run on the global rayon
//! pool; without it they run sequentially. Output order is the index order
//! in both cases, so results are bitwise identical across the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `0..n` through `f`, preserving index order; the first error aborts
/// the loop.
pub(crate) fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
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

