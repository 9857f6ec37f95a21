//! Trajectory-parallel execution with seed-ordered results.

use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

use crate::error::{HarnessError, Result};

/// Runs `job` once per seed on `threads` worker threads (all cores when
/// `None`). Results come back in seed-list order whatever the scheduling,
/// and each job sees only its own seed, so the output is identical for any
/// thread count.
pub fn par_map_seeds<T, F>(seeds: &[u64], threads: Option<usize>, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let mut builder = ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(HarnessError::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(|&s| job(s)).collect()))
}

/// Sample mean, unbiased variance and standard error of the mean.
pub fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (x.first().copied().unwrap_or(f64::NAN), f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var, (var / n).sqrt())
}
