//! Thread-pool versions of the simulation and correlation passes.
//!
//! Both split work on boundaries that do not depend on the thread count, so
//! their output is identical for any number of threads.

use rayon::prelude::*;

use hbt_core::correlator::{correlate_shard, shard_bounds, CorrelationHistogram, HistogramSpec};
use hbt_core::experiment::ExperimentConfig;
use hbt_core::sampler::{assemble_stream, simulate_shard, RunSpec};
use hbt_core::tagstream::{check_sorted, TagStream, TimeTag};

use crate::error::{CliError, Result};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "PHOTON_HBT_THREADS";

/// A pool with `threads` workers, or the rayon default for `None`/0.
pub fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(format!("cannot start thread pool: {e}")))
}

pub fn simulate(config: &ExperimentConfig, run: &RunSpec, pool: &rayon::ThreadPool) -> Result<TagStream> {
    let timeline = config.validate()?;
    let n = run.n_shards(timeline.rep_period_ps);
    let shards: Vec<Vec<TimeTag>> =
        pool.install(|| (0..n).into_par_iter().map(|s| simulate_shard(config, &timeline, run, s)).collect());
    Ok(assemble_stream(config, &timeline, run, shards))
}

/// Tags per correlation shard; small enough to balance, large enough that
/// the warm-up overlap is negligible.
const CORRELATE_CHUNK: usize = 1 << 18;

pub fn cross_correlate(tags: &[TimeTag], spec: &HistogramSpec, pool: &rayon::ThreadPool) -> Result<CorrelationHistogram> {
    spec.validate()?;
    check_sorted(tags)?;
    let n_shards = tags.len().div_ceil(CORRELATE_CHUNK).max(1);
    let bounds = shard_bounds(tags, spec, n_shards);
    let parts: Vec<CorrelationHistogram> =
        pool.install(|| bounds.par_iter().map(|&b| correlate_shard(tags, spec, b)).collect());
    let mut total = CorrelationHistogram::zeros(spec);
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}
