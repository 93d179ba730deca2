//! Order-preserving batch helpers.
//!
//! With the `parallel` feature (default) [`map`] fans work out over rayon;
//! without it the same signature runs a plain iterator. Reductions in this
//! crate always happen sequentially over the collected results, so the two
//! builds produce identical output bit for bit. [`map_seq`] is always
//! sequential and exists so benchmarks can compare both paths in one binary.

#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential reference path with the same contract as [`map`].
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}
