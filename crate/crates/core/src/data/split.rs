//! Train/validation/test split.
//!
//! Test data is whole held-out cells (or the last cycles of a single-cell
//! dataset). The remaining stride-1 windows are cut into contiguous blocks
//! per cycle, the blocks shuffled, and validation filled block by block up to
//! `round(val_fraction * total)` windows. Blocks keep training windows in
//! runs long enough for the lag-1 correlation term and limit overlap between
//! training and validation windows to block edges.

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, WindowIndex, WindowSet};
use crate::error::{Error, Result};
use crate::numerics::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    /// Every cycle of these cells is test data.
    Cells(Vec<String>),
    /// The last `n` cycles (by position) are test data.
    LastCycles(usize),
}

impl Holdout {
    /// Positions of the held-out cycles.
    pub fn test_cycles(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        let positions: Vec<usize> = match self {
            Holdout::Cells(cells) => {
                let present = dataset.cell_ids();
                if let Some(missing) = cells.iter().find(|c| !present.contains(&c.as_str())) {
                    return Err(Error::Config(format!(
                        "holdout cell `{missing}` is not in the dataset"
                    )));
                }
                (0..dataset.cycles.len())
                    .filter(|&p| cells.contains(&dataset.cycles[p].cell_id))
                    .collect()
            }
            Holdout::LastCycles(n) => {
                let total = dataset.cycles.len();
                if *n > total {
                    return Err(Error::Config(format!(
                        "cannot hold out {n} of {total} cycles"
                    )));
                }
                (total - n..total).collect()
            }
        };
        if positions.len() == dataset.cycles.len() {
            return Err(Error::Config(
                "holdout leaves no cycles for training".into(),
            ));
        }
        Ok(positions)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: WindowSet,
    pub validation: WindowSet,
    /// Positions of the held-out cycles in `Dataset::cycles`.
    pub test_cycles: Vec<usize>,
}

impl Split {
    /// Sample ranges covered by training windows, merged per cycle.
    pub fn train_ranges(&self) -> Vec<(usize, Range<usize>)> {
        let span = self.train.span();
        let mut out: Vec<(usize, Range<usize>)> = Vec::new();
        for w in &self.train.index {
            let r = w.start..w.start + span;
            match out.last_mut() {
                Some((c, last)) if *c == w.cycle && r.start <= last.end => {
                    last.end = last.end.max(r.end)
                }
                _ => out.push((w.cycle, r)),
            }
        }
        out
    }
}

/// Splits stride-1 `windows` over `dataset`. Both returned window sets are
/// sorted by (cycle, start).
pub fn split_dataset(
    dataset: &Dataset,
    windows: &WindowSet,
    holdout: &Holdout,
    val_fraction: f64,
    block_len: usize,
    seed: u64,
) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    if block_len == 0 {
        return Err(Error::Config("split block length must be positive".into()));
    }
    if windows.stride != 1 {
        return Err(Error::Config(format!(
            "split expects stride-1 windows, got stride {}",
            windows.stride
        )));
    }
    let test_cycles = holdout.test_cycles(dataset)?;

    let mut blocks: Vec<&[WindowIndex]> = Vec::new();
    let pool: Vec<WindowIndex> = windows
        .index
        .iter()
        .copied()
        .filter(|w| test_cycles.binary_search(&w.cycle).is_err())
        .collect();
    if pool.is_empty() {
        return Err(Error::Data(
            "no training windows outside the holdout".into(),
        ));
    }
    for run in pool.chunk_by(|a, b| a.cycle == b.cycle) {
        blocks.extend(run.chunks(block_len));
    }
    blocks.shuffle(&mut rng_for(seed, 0));

    let target = (val_fraction * pool.len() as f64).round() as usize;
    let mut validation = Vec::with_capacity(target);
    let mut train = Vec::with_capacity(pool.len() - target);
    for block in blocks {
        let take = (target - validation.len()).min(block.len());
        validation.extend_from_slice(&block[..take]);
        train.extend_from_slice(&block[take..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split {
        train: windows.with_index(train),
        validation: windows.with_index(validation),
        test_cycles,
    })
}
