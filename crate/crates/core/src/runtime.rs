//! Execution hooks supplied by the embedding environment.
//!
//! The core crate has no threads or clocks of its own. Callers pass a
//! [`Runtime`] that decides how independent work items (landmark searches,
//! image rows) are scheduled and, optionally, reports elapsed time.

use alloc::vec::Vec;

pub trait Runtime: Sync {
    /// Evaluates `f(0..n)` and returns the results in index order. The
    /// result must not depend on how the work was scheduled.
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;

    /// Monotonic milliseconds since an arbitrary epoch, if a clock exists.
    fn now_ms(&self) -> Option<f64> {
        None
    }
}

/// Runs everything on the calling thread, without a clock.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runtime for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Elapsed milliseconds between two `now_ms` readings, 0 without a clock.
pub(crate) fn elapsed(start: Option<f64>, end: Option<f64>) -> f64 {
    match (start, end) {
        (Some(s), Some(e)) => e - s,
        _ => 0.0,
    }
}
