use std::time::Instant;

use logmosaic_core::runtime::Runtime;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};

/// Runs core work items on a rayon pool. Results are collected in index
/// order, so output does not depend on the thread count.
pub struct RayonRuntime {
    pool: ThreadPool,
    clock: Option<Instant>,
}

impl RayonRuntime {
    /// `threads == 0` uses the available parallelism. Without `timed`, stage
    /// timings are reported as zero so reports are reproducible byte for byte.
    pub fn new(threads: usize, timed: bool) -> Result<Self, ThreadPoolBuildError> {
        let pool = ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self {
            pool,
            clock: timed.then(Instant::now),
        })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Runtime for RayonRuntime {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }

    fn now_ms(&self) -> Option<f64> {
        self.clock.map(|t| t.elapsed().as_secs_f64() * 1e3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let rt = RayonRuntime::new(4, false).unwrap();
        let out = rt.map_indexed(1000, |i| i * 3);
        assert!(out.iter().enumerate().all(|(i, &v)| v == i * 3));
        assert_eq!(rt.now_ms(), None);
    }
}
