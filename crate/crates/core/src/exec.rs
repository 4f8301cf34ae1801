//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in input order, so callers get the same output
//! whichever mode runs. Without the `parallel` feature, [`Execution::Parallel`]
//! silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Map `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Like [`Execution::map`] but with at most `limit` items in flight.
    ///
    /// A limit of 0 or 1 runs sequentially on the calling thread.
    pub fn map_bounded<T, R, F>(self, items: &[T], limit: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if limit <= 1 {
            return items.iter().map(f).collect();
        }
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => match rayon::ThreadPoolBuilder::new().num_threads(limit).build()
            {
                Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                Err(err) => {
                    tracing::warn!("thread pool unavailable ({err}); running sequentially");
                    items.iter().map(f).collect()
                }
            },
            _ => items.iter().map(f).collect(),
        }
    }
}
