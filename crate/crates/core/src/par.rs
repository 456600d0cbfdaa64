//! Parallel-map capability handed to modules by the caller.
//!
//! A [`Pool`] wraps an optional rayon thread pool. Work items are mapped in
//! input order and results collected in input order, so a parallel run
//! produces bit-identical output to a sequential one whenever the items are
//! independent (which is how every caller in this crate uses it). With the
//! `parallel` feature disabled, or with `threads == 1`, the map degrades to a
//! plain sequential loop.

/// Worker pool sized at construction. `threads == 0` means "all available".
pub struct Pool {
    threads: usize,
    #[cfg(feature = "parallel")]
    inner: Option<rayon::ThreadPool>,
}

impl Pool {
    pub fn new(threads: usize) -> Self {
        let threads = if threads == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            threads
        };
        #[cfg(feature = "parallel")]
        {
            let inner = if threads > 1 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .ok()
            } else {
                None
            };
            Pool { threads, inner }
        }
        #[cfg(not(feature = "parallel"))]
        Pool { threads }
    }

    /// Single-threaded pool; the default for tests and the CLI.
    pub fn serial() -> Self {
        Self::new(1)
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Map `f` over `items`, returning results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.inner {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

impl Default for Pool {
    fn default() -> Self {
        Self::serial()
    }
}
