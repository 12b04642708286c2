//! History/future windows over single cycles.
//!
//! Windows are stored as `(cycle position, start)` pairs and viewed through
//! [`WindowSample`], so a stride-1 window set over a long dataset stays cheap.

use super::{CycleSeries, Dataset};
use crate::encoder::INPUT_CHANNELS;
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowIndex {
    /// Position of the cycle in `Dataset::cycles`.
    pub cycle: usize,
    /// First history sample.
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    pub n_a: usize,
    pub n_b: usize,
    pub stride: usize,
    pub index: Vec<WindowIndex>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn span(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn sample<'a>(&self, dataset: &'a Dataset, w: WindowIndex) -> WindowSample<'a> {
        WindowSample {
            cycle: &dataset.cycles[w.cycle],
            start: w.start,
            n_a: self.n_a,
            n_b: self.n_b,
        }
    }

    pub fn samples<'a>(
        &'a self,
        dataset: &'a Dataset,
    ) -> impl Iterator<Item = WindowSample<'a>> + 'a {
        self.index.iter().map(move |&w| self.sample(dataset, w))
    }

    pub fn with_index(&self, index: Vec<WindowIndex>) -> WindowSet {
        WindowSet {
            n_a: self.n_a,
            n_b: self.n_b,
            stride: self.stride,
            index,
        }
    }
}

/// Borrowed view of one window.
#[derive(Debug, Clone, Copy)]
pub struct WindowSample<'a> {
    pub cycle: &'a CycleSeries,
    pub start: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl<'a> WindowSample<'a> {
    pub fn cell_id(&self) -> &'a str {
        &self.cycle.cell_id
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle.cycle_index
    }

    /// Index of the last history sample.
    pub fn history_end(&self) -> usize {
        self.start + self.n_a - 1
    }

    fn future(&self) -> std::ops::Range<usize> {
        self.start + self.n_a..self.start + self.n_a + self.n_b
    }

    /// Sample-major `[n_a x 2]` block of (current, voltage).
    pub fn history(&self) -> RealMatrix {
        let mut data = Vec::with_capacity(self.n_a * INPUT_CHANNELS);
        for k in self.start..self.start + self.n_a {
            data.push(self.cycle.current_a[k]);
            data.push(self.cycle.voltage_v[k]);
        }
        RealMatrix::from_vec(self.n_a, INPUT_CHANNELS, data).expect("window lies inside its cycle")
    }

    /// Channel-major `[2 x n_a]` history as consumed by the conv stack.
    pub fn history_channels(&self) -> RealMatrix {
        let h = self.start..self.start + self.n_a;
        let mut data = Vec::with_capacity(self.n_a * INPUT_CHANNELS);
        data.extend_from_slice(&self.cycle.current_a[h.clone()]);
        data.extend_from_slice(&self.cycle.voltage_v[h]);
        RealMatrix::from_vec(INPUT_CHANNELS, self.n_a, data).expect("window lies inside its cycle")
    }

    pub fn future_inputs(&self) -> &'a [f64] {
        &self.cycle.current_a[self.future()]
    }

    pub fn targets(&self) -> &'a [f64] {
        &self.cycle.voltage_v[self.future()]
    }

    pub fn future_times(&self) -> &'a [f64] {
        &self.cycle.time_s[self.future()]
    }

    /// Last observed voltage, the persistence forecast.
    pub fn last_voltage(&self) -> f64 {
        self.cycle.voltage_v[self.history_end()]
    }
}

/// Number of windows a cycle of length `len` yields.
pub fn window_count(len: usize, n_a: usize, n_b: usize, stride: usize) -> usize {
    if len < n_a + n_b {
        0
    } else {
        (len - n_a - n_b) / stride + 1
    }
}

/// All windows of every cycle, in cycle order then start order.
pub fn make_windows(dataset: &Dataset, n_a: usize, n_b: usize, stride: usize) -> Result<WindowSet> {
    if n_a == 0 || n_b == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window sizes must be positive, got n_a = {n_a}, n_b = {n_b}, stride = {stride}"
        )));
    }
    let mut index = Vec::new();
    for (c, cycle) in dataset.cycles.iter().enumerate() {
        let count = window_count(cycle.len(), n_a, n_b, stride);
        index.extend((0..count).map(|k| WindowIndex {
            cycle: c,
            start: k * stride,
        }));
    }
    Ok(WindowSet {
        n_a,
        n_b,
        stride,
        index,
    })
}
