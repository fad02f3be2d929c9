//! The runnable experiments. Each returns its CSV rows in a fixed order.

mod ar_toy;
mod gaussian;
mod oracle;
mod ring;

pub use ar_toy::run_ar_toy;
pub use gaussian::run_gaussian_proposal;
pub use oracle::run_oracle_suite;
pub use ring::run_ring;

use contrastive_core::rng::derive_seed;
use contrastive_core::trainer::MetricTrace;
use rayon::prelude::*;

use crate::output::Series;
use crate::RunError;

/// Run `reps` repetitions in parallel, each with seed `derive_seed(master, [tag.., rep])`.
/// Results come back in repetition order.
pub(crate) fn repetitions<T, F>(
    master: u64,
    tag: &[u64],
    reps: usize,
    f: F,
) -> Result<Vec<T>, RunError>
where
    T: Send,
    F: Fn(u64) -> Result<T, RunError> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut path = tag.to_vec();
            path.push(r as u64);
            f(derive_seed(master, &path))
        })
        .collect()
}

/// `iteration -> value` of one metric in a trace, skipping records without it.
pub(crate) fn series(trace: &MetricTrace, metric: &str) -> Series {
    trace
        .iter()
        .filter_map(|r| r.metrics.get(metric).map(|v| (r.iteration, *v)))
        .collect()
}

/// Last value of a metric in a trace.
pub(crate) fn final_value(trace: &MetricTrace, metric: &str) -> Result<(usize, f64), RunError> {
    trace
        .iter()
        .rev()
        .find_map(|r| r.metrics.get(metric).map(|v| (r.iteration, *v)))
        .ok_or_else(|| RunError::Numeric(format!("metric `{metric}` was never logged")))
}
