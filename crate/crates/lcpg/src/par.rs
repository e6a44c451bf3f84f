//! Deterministic data-parallel helpers.
//!
//! Reductions split the index range into fixed chunks of [`CHUNK`] items and
//! add the chunk partials in index order, so the floating-point result does
//! not depend on the thread count or on whether the `parallel` feature is on.

use crate::Vector;

pub const CHUNK: usize = 64;

/// `Σ_{i<n} f(i)` for vector-valued `f`, where `f(i, acc)` adds its term into `acc`.
pub fn chunked_sum<F>(n: usize, d: usize, f: F) -> Vector
where
    F: Fn(usize, &mut Vector) + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partial = |c: usize| {
        let mut acc = Vector::zeros(d);
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            f(i, &mut acc);
        }
        acc
    };
    let partials = map_indices(n_chunks, partial);
    let mut total = Vector::zeros(d);
    for p in &partials {
        total += p;
    }
    total
}

/// Scalar counterpart of [`chunked_sum`].
pub fn chunked_sum_scalar<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = map_indices(n_chunks, |c| {
        (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum::<f64>()
    });
    partials.iter().sum()
}

/// `(0..n).map(f).collect()`, evaluated in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential reference of [`chunked_sum`], always available for benchmarks and tests.
pub fn chunked_sum_seq<F>(n: usize, d: usize, f: F) -> Vector
where
    F: Fn(usize, &mut Vector),
{
    let mut total = Vector::zeros(d);
    for c in 0..n.div_ceil(CHUNK) {
        let mut acc = Vector::zeros(d);
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            f(i, &mut acc);
        }
        total += acc;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_sums_are_bit_identical() {
        let n = 1000;
        let term = |i: usize, acc: &mut Vector| {
            let t = (i as f64 * 0.37).sin() / (1.0 + i as f64);
            acc[0] += t;
            acc[1] += t * t * 1e8;
        };
        let a = chunked_sum(n, 2, term);
        let b = chunked_sum_seq(n, 2, term);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn empty_range_sums_to_zero() {
        assert_eq!(chunked_sum(0, 3, |_, _| {}), Vector::zeros(3));
        assert_eq!(chunked_sum_scalar(0, |_| 1.0), 0.0);
    }

    #[test]
    fn map_indices_preserves_order() {
        assert_eq!(map_indices(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
