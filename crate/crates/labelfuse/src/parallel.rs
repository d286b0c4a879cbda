//! Multi-threaded driver for per-image fusion.

use std::collections::BTreeSet;

use labelfuse_core::fuse::{assemble, fuse_image, plan_jobs, FuseError, FusionConfig, FusionOutput};
use labelfuse_core::model::{Dataset, Detection};
use rayon::prelude::*;

/// Same result as [`labelfuse_core::fuse::fuse_dataset`], computed on
/// `threads` workers (0 picks the core count). Output order does not depend
/// on scheduling.
pub fn fuse_dataset_parallel(
    target: &Dataset,
    native: &BTreeSet<u32>,
    foreign: &[Detection],
    cfg: &FusionConfig,
    threads: usize,
) -> Result<FusionOutput, FuseError> {
    cfg.validate()?;
    let jobs = plan_jobs(target, foreign)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| FuseError::InvalidConfig(format!("thread pool: {e}")))?;
    let results =
        pool.install(|| jobs.par_iter().map(|job| fuse_image(job, native, cfg)).collect::<Result<Vec<_>, _>>())?;
    Ok(assemble(&target.id, results))
}
