//! Data-parallel map helpers.
//!
//! `map_slice` / `map_range` dispatch to rayon when the `parallel` feature
//! is enabled and fall back to a plain iterator otherwise. Both collect in
//! input order, so callers see identical results either way as long as each
//! item's work is self-contained (the invariant all round-internal work in
//! this crate maintains). `map_slice_seq` / `map_range_seq` are always
//! sequential; the bench suite uses them as the comparison baseline.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_slice_seq<X, Y, F>(items: &[X], f: F) -> Vec<Y>
where
    F: Fn(&X) -> Y,
{
    items.iter().map(f).collect()
}

pub fn map_range_seq<Y, F>(n: usize, f: F) -> Vec<Y>
where
    F: Fn(usize) -> Y,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<X, Y, F>(items: &[X], f: F) -> Vec<Y>
where
    X: Sync,
    Y: Send,
    F: Fn(&X) -> Y + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<X, Y, F>(items: &[X], f: F) -> Vec<Y>
where
    F: Fn(&X) -> Y,
{
    map_slice_seq(items, f)
}

#[cfg(feature = "parallel")]
pub fn map_range<Y, F>(n: usize, f: F) -> Vec<Y>
where
    Y: Send,
    F: Fn(usize) -> Y + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<Y, F>(n: usize, f: F) -> Vec<Y>
where
    F: Fn(usize) -> Y,
{
    map_range_seq(n, f)
}
