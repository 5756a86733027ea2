//! Thin data-parallel layer: rayon when the `parallel` feature is on, plain
//! iterators otherwise. Every reduction here is over integer counts or is
//! followed by an order-independent use, so results do not depend on the
//! worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Worker configuration for a run. `threads = None` uses the global pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Parallelism {
    pub threads: Option<usize>,
}

impl Parallelism {
    pub fn sequential() -> Self {
        Parallelism { threads: Some(1) }
    }

    pub fn with_threads(threads: usize) -> Self {
        Parallelism {
            threads: Some(threads.max(1)),
        }
    }

    /// Runs `f` on a pool sized for this configuration.
    #[cfg(feature = "parallel")]
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match self.threads {
            None => f(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool")
                .install(f),
        }
    }

    #[cfg(not(feature = "parallel"))]
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        f()
    }
}

/// `sum_{i < n} f(i)`. Floating sums may differ in the last bits between
/// worker counts; callers needing bit-exact results reduce integers.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        // Collect then sum sequentially so the float result is order-stable.
        let parts: Vec<f64> = (0..n).into_par_iter().map(f).collect();
        parts.iter().sum()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).sum()
    }
}

/// `(0..n).map(f).collect()`, in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Folds `f` over `start..end` into `T` and combines the partial results.
/// `combine` must be associative and commutative.
pub fn fold_range<T, F, C>(start: u64, end: u64, f: F, combine: C) -> T
where
    T: Default + Send,
    F: Fn(&mut T, u64) + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (start..end)
            .into_par_iter()
            .fold(T::default, |mut acc, i| {
                f(&mut acc, i);
                acc
            })
            .reduce(T::default, &combine)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = &combine;
        let mut acc = T::default();
        for i in start..end {
            f(&mut acc, i);
        }
        acc
    }
}
