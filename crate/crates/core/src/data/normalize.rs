//! Per-channel min-max scaling onto `[-0.8, 0.8]`, inside the range of the
//! decoder's `tanh` head with some headroom.

use serde::{Deserialize, Serialize};

use super::{CycleSeries, Dataset};
use crate::error::{Error, Result};

pub const NORM_HALF_RANGE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub min: f64,
    pub max: f64,
    /// The channel was constant; it maps to zero and back to `min`.
    pub constant: bool,
}

impl ChannelStats {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut seen = false;
        for v in values {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "cannot normalize non-finite value {v}"
                )));
            }
            min = min.min(v);
            max = max.max(v);
            seen = true;
        }
        if !seen {
            return Err(Error::Data(
                "cannot fit normalization on an empty channel".into(),
            ));
        }
        Ok(Self {
            min,
            max,
            constant: max <= min,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            -NORM_HALF_RANGE + 2.0 * NORM_HALF_RANGE * (x - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            self.min + (z + NORM_HALF_RANGE) * (self.max - self.min) / (2.0 * NORM_HALF_RANGE)
        }
    }

    /// Volts (or amperes) per normalized unit.
    pub fn scale(&self) -> f64 {
        if self.constant {
            0.0
        } else {
            (self.max - self.min) / (2.0 * NORM_HALF_RANGE)
        }
    }
}

/// Scaling for the current and voltage channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub current: ChannelStats,
    pub voltage: ChannelStats,
}

impl NormStats {
    pub fn fit(cycles: &[CycleSeries]) -> Result<Self> {
        Ok(Self {
            current: ChannelStats::fit(cycles.iter().flat_map(|c| c.current_a.iter().copied()))?,
            voltage: ChannelStats::fit(cycles.iter().flat_map(|c| c.voltage_v.iter().copied()))?,
        })
    }

    /// Fits on the sample ranges `(cycle position, start..end)` only.
    pub fn fit_ranges(
        dataset: &Dataset,
        ranges: &[(usize, std::ops::Range<usize>)],
    ) -> Result<Self> {
        let pick = |f: fn(&CycleSeries) -> &[f64]| {
            ranges
                .iter()
                .flat_map(move |(c, r)| f(&dataset.cycles[*c])[r.clone()].iter().copied())
        };
        Ok(Self {
            current: ChannelStats::fit(pick(|c| &c.current_a))?,
            voltage: ChannelStats::fit(pick(|c| &c.voltage_v))?,
        })
    }

    /// Normalizes a raw dataset with these stats.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.is_normalized() {
            return Err(Error::Data("dataset is already normalized".into()));
        }
        let mut out = dataset.clone();
        for c in &mut out.cycles {
            c.current_a
                .iter_mut()
                .for_each(|x| *x = self.current.apply(*x));
            c.voltage_v
                .iter_mut()
                .for_each(|x| *x = self.voltage.apply(*x));
        }
        out.stats = Some(*self);
        Ok(out)
    }
}

/// Fits stats on the whole dataset and normalizes it.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, NormStats)> {
    if dataset.cycles.is_empty() {
        return Err(Error::Data("cannot normalize an empty dataset".into()));
    }
    let stats = NormStats::fit(&dataset.cycles)?;
    Ok((stats.apply(dataset)?, stats))
}

/// Maps normalized values of one channel back to physical units.
pub fn denormalize(stats: &ChannelStats, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&z| stats.invert(z)).collect()
}
