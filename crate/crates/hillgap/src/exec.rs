//! Rayon-backed [`Executor`].

use hillgap_core::spectra::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::{AppError, Result};

/// Variable capping the worker count; unset or 0 means one per core.
pub const THREADS_VAR: &str = "HILLGAP_THREADS";

pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| AppError::Usage(format!("cannot start thread pool: {e}")))?;
        Ok(Parallel { pool })
    }

    pub fn from_env() -> Result<Self> {
        let threads = match std::env::var(THREADS_VAR) {
            Ok(s) if !s.trim().is_empty() => s
                .trim()
                .parse::<usize>()
                .map_err(|_| AppError::Usage(format!("{THREADS_VAR} must be a non-negative integer, got `{s}`")))?,
            _ => 0,
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, xs: &[f64], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(f64) -> T + Sync + Send,
    {
        // indexed collect keeps input order
        self.pool.install(|| xs.par_iter().map(|x| f(*x)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let out = Parallel::new(4).unwrap().map(&xs, |x| x * 2.0);
        assert!(out.iter().enumerate().all(|(i, v)| *v == 2.0 * i as f64));
    }
}
