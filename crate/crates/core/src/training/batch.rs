//! Cycle-group batching for the correlation term.
//!
//! A group is `run_len` windows with consecutive starts from one cycle, so
//! its latents form a time series sampled every 0.1 s. Groups are cut from
//! maximal runs of stride-1 windows; each epoch shifts the cut by a random
//! phase (when the run leaves slack) and shuffles the group order.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{WindowIndex, WindowSet};
use crate::error::{Error, Result};
use crate::numerics::rng_for;

/// One batch: groups of contiguous windows.
pub type Batch = Vec<Vec<WindowIndex>>;

/// Maximal runs of windows with consecutive starts in one cycle.
pub(crate) fn contiguous_runs(windows: &WindowSet) -> Vec<&[WindowIndex]> {
    windows
        .index
        .chunk_by(|a, b| a.cycle == b.cycle && b.start == a.start + 1)
        .collect()
}

/// Splits `windows` into shuffled batches of `batch_size` groups of
/// `run_len` windows. `max_groups` caps the groups drawn per epoch.
pub fn batch_sampler(
    windows: &WindowSet,
    run_len: usize,
    batch_size: usize,
    max_groups: Option<usize>,
    epoch_seed: u64,
) -> Result<Vec<Batch>> {
    if run_len < 3 {
        return Err(Error::Config(format!(
            "contiguous_run_length must be at least 3, got {run_len}"
        )));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if windows.stride != 1 {
        return Err(Error::Config(format!(
            "batching needs stride-1 windows, got stride {}",
            windows.stride
        )));
    }
    let mut rng = rng_for(epoch_seed, 0);
    let mut groups: Vec<&[WindowIndex]> = Vec::new();
    for run in contiguous_runs(windows) {
        let slack = run.len() % run_len;
        let phase = if slack == 0 {
            0
        } else {
            rng.gen_range(0..=slack)
        };
        groups.extend(run[phase..].chunks_exact(run_len));
    }
    if groups.is_empty() {
        return Err(Error::Data(format!(
            "no cycle provides {run_len} consecutive windows for a correlation group"
        )));
    }
    groups.shuffle(&mut rng);
    if let Some(cap) = max_groups {
        groups.truncate(cap.max(1));
    }
    Ok(groups
        .chunks(batch_size)
        .map(|b| b.iter().map(|g| g.to_vec()).collect())
        .collect())
}
