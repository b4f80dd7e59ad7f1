//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel loop in the crate goes through these functions. They map
//! independent items to an index-ordered `Vec`, so reductions done afterwards
//! run in a fixed order and results are bitwise identical whether the
//! `parallel` feature is on or off and regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Map over a slice, collecting results in item order.
#[cfg(feature = "parallel")]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map over a slice, collecting results in item order.
#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Always-sequential variant of [`map_range`], kept public so benches can put
/// the two execution paths side by side in one run.
pub fn map_range_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// True when the parallel backend is compiled in.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| (i as f64).sqrt() * 1.000000001_f64.powi(i as i32);
        let a = map_range(1000, f);
        let b = map_range_seq(1000, f);
        assert_eq!(a, b);
    }
}
