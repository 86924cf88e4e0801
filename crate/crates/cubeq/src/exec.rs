//! Worker-pool context and deterministic reductions.
//!
//! All parallel work in this crate is structured as "map fixed work items in
//! a canonical order, then reduce sequentially or pairwise". Results are
//! therefore bit-identical regardless of how many worker threads execute the
//! map phase.

use std::sync::Arc;

use num::complex::Complex64;

use crate::{Error, Result};

/// Parallelism context handed to operations that can use a worker pool.
///
/// `ExecCtx::default()` uses the process-wide rayon pool (machine
/// parallelism); [`ExecCtx::with_threads`] pins an explicit worker count.
#[derive(Clone, Default)]
pub struct ExecCtx {
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl ExecCtx {
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::InvalidInput("thread count must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        Ok(ExecCtx {
            pool: Some(Arc::new(pool)),
        })
    }

    /// Run `f` inside this context's pool (or the global pool).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }
}

/// Sum by pairwise tree reduction in canonical (index) order.
///
/// Deterministic for a fixed input slice and more accurate than a running
/// sum on long inputs.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Complex variant of [`pairwise_sum`].
pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_complex(&xs[..mid]) + pairwise_sum_complex(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let seq: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - seq).abs() < 1e-9);
    }

    #[test]
    fn ctx_thread_count_does_not_change_order() {
        let items: Vec<u64> = (0..500).collect();
        let run = |ctx: &ExecCtx| -> Vec<u64> {
            use rayon::prelude::*;
            ctx.install(|| items.par_iter().map(|x| x * x).collect())
        };
        let a = run(&ExecCtx::with_threads(1).unwrap());
        let b = run(&ExecCtx::with_threads(4).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(ExecCtx::with_threads(0).is_err());
    }
}
