//! Data-parallel helpers. With the `parallel` feature (default) the path
//! loop runs on rayon; without it, or when `force_sequential` is set, the
//! same closure runs serially. Results are merged by index so the output
//! is identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, force_sequential: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !force_sequential {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = force_sequential;
    (0..n).map(f).collect()
}
