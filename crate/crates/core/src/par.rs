//! Execution strategy for the elementwise kernels.
//!
//! With the `parallel` feature (on by default) the element loop of the
//! aggregation kernels is split across the rayon pool. Each output element is
//! still reduced over its inputs in index order, so both strategies produce
//! bit-identical results.

/// How an elementwise kernel walks its output positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    Sequential,
    /// Falls back to [`Strategy::Sequential`] when the `parallel` feature is off.
    #[default]
    Parallel,
}

/// Below this many elements the parallel path costs more than it saves.
pub const PARALLEL_THRESHOLD: usize = 4096;

impl Strategy {
    /// Strategy the public kernels use when the caller does not choose.
    pub fn auto(len: usize) -> Strategy {
        if cfg!(feature = "parallel") && len >= PARALLEL_THRESHOLD {
            Strategy::Parallel
        } else {
            Strategy::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Strategy::Parallel
    }
}

/// Builds `out[i] = f(i)` for `i in 0..len`.
pub fn map_indices<T, F>(len: usize, strategy: Strategy, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if strategy.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = strategy;
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indices`]; the first error in index order wins
/// on the sequential path, any error wins on the parallel one.
pub fn try_map_indices<T, E, F>(len: usize, strategy: Strategy, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if strategy.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = strategy;
    (0..len).map(f).collect()
}
