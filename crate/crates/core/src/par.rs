//! Data-parallel building blocks with a sequential fallback.
//!
//! With the `parallel` feature (default) the map-style helpers run on the
//! rayon global pool; without it they are plain loops. Reductions always
//! combine partial results in a fixed chunk order, so sums are
//! bit-identical no matter how many threads run the map phase.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic reductions and work splitting.
const CHUNK: usize = 4096;

/// In-place indexed map over a mutable slice.
pub fn for_each_indexed<T, F>(data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_iter_mut()
            .with_min_len(CHUNK / 4)
            .enumerate()
            .for_each(|(i, x)| f(i, x));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, x) in data.iter_mut().enumerate() {
            f(i, x);
        }
    }
}

/// Fill `out[i] = f(i)`.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    for_each_indexed(out, |i, x| *x = f(i));
}

/// Deterministic sum of `f(i)` for `i in 0..n`.
///
/// The index range is split into fixed chunks; each chunk is summed
/// sequentially and the per-chunk results are combined in chunk order.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunk_sums: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let lo = c * CHUNK;
                    let hi = (lo + CHUNK).min(n);
                    let mut s = 0.0;
                    for i in lo..hi {
                        s += f(i);
                    }
                    s
                })
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n.div_ceil(CHUNK))
                .map(|c| {
                    let lo = c * CHUNK;
                    let hi = (lo + CHUNK).min(n);
                    let mut s = 0.0;
                    for i in lo..hi {
                        s += f(i);
                    }
                    s
                })
                .collect()
        }
    };
    let mut total = 0.0;
    for s in chunk_sums {
        total += s;
    }
    total
}

/// Deterministic dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_indexed(a.len(), |i| a[i] * b[i])
}

/// Deterministic squared Euclidean norm.
pub fn norm_sq(a: &[f64]) -> f64 {
    sum_indexed(a.len(), |i| a[i] * a[i])
}

/// Deterministic maximum of `f(i)` over `i in 0..n` (`-inf` for `n == 0`).
pub fn max_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunk_maxes: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let lo = c * CHUNK;
                    let hi = (lo + CHUNK).min(n);
                    let mut m = f64::NEG_INFINITY;
                    for i in lo..hi {
                        m = m.max(f(i));
                    }
                    m
                })
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n.div_ceil(CHUNK))
                .map(|c| {
                    let lo = c * CHUNK;
                    let hi = (lo + CHUNK).min(n);
                    let mut m = f64::NEG_INFINITY;
                    for i in lo..hi {
                        m = m.max(f(i));
                    }
                    m
                })
                .collect()
        }
    };
    let mut total = f64::NEG_INFINITY;
    for m in chunk_maxes {
        total = total.max(m);
    }
    total
}

/// `y += alpha * x`, elementwise.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for_each_indexed(y, |i, v| *v += alpha * x[i]);
}
