//! Battery cycle data: the synthetic two-timescale simulator, CSV I/O,
//! normalization, windowing and train/validation/test splits.

mod csv_io;
mod normalize;
mod sim;
mod split;
mod windows;

pub use csv_io::{load_csv, write_csv, CSV_HEADER, CSV_TRUTH_HEADER};
pub use normalize::{denormalize, normalize, ChannelStats, NormStats, NORM_HALF_RANGE};
pub use sim::{
    generate_dataset, simulate_cycle, Aging, DriveProfile, FadeKnot, FadeSchedule, GenerateConfig,
    OcvCurve, SimConfig,
};
pub use split::{split_dataset, Holdout, Split};
pub use windows::{make_windows, window_count, WindowIndex, WindowSample, WindowSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal sample spacing of the 10 Hz logs.
pub const NOMINAL_DT_S: f64 = 0.1;

/// Ground-truth slow states, available for simulated cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// State of charge per sample, as a fraction.
    pub soc: Vec<f64>,
    /// Capacity factor (1.0 = fresh).
    pub theta_q: f64,
    /// Series-resistance factor (1.0 = fresh).
    pub theta_r: f64,
}

/// One discharge cycle. Current is positive on discharge.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSeries {
    pub cell_id: String,
    pub cycle_index: usize,
    pub time_s: Vec<f64>,
    pub current_a: Vec<f64>,
    pub voltage_v: Vec<f64>,
    pub truth: Option<GroundTruth>,
    /// Set when simulation stopped early because SOC left `[0, 1]`.
    pub truncated: bool,
}

impl CycleSeries {
    pub fn len(&self) -> usize {
        self.time_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_s.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.time_s.len();
        if n == 0 {
            return Err(Error::Data(format!(
                "cycle {} of `{}` is empty",
                self.cycle_index, self.cell_id
            )));
        }
        if self.current_a.len() != n || self.voltage_v.len() != n {
            return Err(Error::Data(format!(
                "cycle {} of `{}`: time/current/voltage lengths differ",
                self.cycle_index, self.cell_id
            )));
        }
        if let Some(t) = &self.truth {
            if t.soc.len() != n {
                return Err(Error::Data(format!(
                    "cycle {} of `{}`: SOC ground truth length differs",
                    self.cycle_index, self.cell_id
                )));
            }
        }
        if let Some(k) = self.time_s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "cycle {} of `{}`: time not strictly increasing at sample {}",
                self.cycle_index,
                self.cell_id,
                k + 1
            )));
        }
        Ok(())
    }

    /// SOC per sample: ground truth when present, otherwise coulomb counting
    /// from `soc_start` with the nominal capacity.
    pub fn soc_or_proxy(&self, q_nom_ah: f64, soc_start: f64) -> Vec<f64> {
        match &self.truth {
            Some(t) => t.soc.clone(),
            None => coulomb_soc(&self.time_s, &self.current_a, q_nom_ah, soc_start),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cycles: Vec<CycleSeries>,
    /// Present exactly when the current and voltage channels are normalized.
    pub stats: Option<NormStats>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(cycles: Vec<CycleSeries>, provenance: Provenance) -> Result<Self> {
        for c in &cycles {
            c.validate()?;
        }
        Ok(Self {
            cycles,
            stats: None,
            provenance,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.stats.is_some()
    }

    /// Distinct cell ids in first-appearance order.
    pub fn cell_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for c in &self.cycles {
            if !ids.contains(&c.cell_id.as_str()) {
                ids.push(&c.cell_id);
            }
        }
        ids
    }

    pub fn total_samples(&self) -> usize {
        self.cycles.iter().map(CycleSeries::len).sum()
    }

    /// A dataset holding clones of the cycles at the given positions.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            cycles: positions.iter().map(|&p| self.cycles[p].clone()).collect(),
            stats: self.stats,
            provenance: self.provenance,
        }
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Discharged charge as a percentage of nominal capacity:
/// `100 * Σ I·dt / (Q_nom * 3600)`.
pub fn discharge_capacity(current_a: &[f64], dt_s: f64, q_nom_ah: f64) -> Result<f64> {
    if !(q_nom_ah > 0.0) {
        return Err(Error::Config(format!(
            "nominal capacity must be positive, got {q_nom_ah}"
        )));
    }
    if !(dt_s > 0.0) {
        return Err(Error::Config(format!(
            "sample spacing must be positive, got {dt_s}"
        )));
    }
    let charge_as = compensated_sum(current_a.iter().copied()) * dt_s;
    Ok(charge_as / (q_nom_ah * 3600.0) * 100.0)
}

/// Coulomb-counted SOC: `SOC_{t+1} = SOC_t - I_t (t_{t+1} - t_t) / (3600 Q)`.
pub fn coulomb_soc(time_s: &[f64], current_a: &[f64], q_nom_ah: f64, soc_start: f64) -> Vec<f64> {
    let mut soc = Vec::with_capacity(time_s.len());
    let mut s = soc_start;
    for k in 0..time_s.len() {
        soc.push(s);
        if k + 1 < time_s.len() {
            s -= current_a[k] * (time_s[k + 1] - time_s[k]) / (3600.0 * q_nom_ah);
        }
    }
    soc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discharge_capacity_reference() {
        let samples = 727_500;
        let current = vec![0.24; samples];
        let q = discharge_capacity(&current, 0.1, 4.85).unwrap();
        assert!((q - 100.0).abs() < 1e-9, "{q}");
        let half = discharge_capacity(&current[..samples / 2], 0.1, 4.85).unwrap();
        assert!((half - 50.0).abs() < 1e-9, "{half}");
        assert_eq!(discharge_capacity(&[0.0; 100], 0.1, 4.85).unwrap(), 0.0);
        assert!(discharge_capacity(&current, 0.1, 0.0).is_err());
    }

    #[test]
    fn coulomb_soc_counts_charge() {
        let time: Vec<f64> = (0..=36_000).map(|k| k as f64 * 0.1).collect();
        let soc = coulomb_soc(&time, &vec![1.0; time.len()], 2.0, 0.9);
        assert!((soc.last().unwrap() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn cycle_validation() {
        let mut c = CycleSeries {
            cell_id: "A".into(),
            cycle_index: 0,
            time_s: vec![0.0, 0.1, 0.1],
            current_a: vec![0.0; 3],
            voltage_v: vec![3.7; 3],
            truth: None,
            truncated: false,
        };
        assert!(c.validate().is_err());
        c.time_s[2] = 0.2;
        c.validate().unwrap();
        c.voltage_v.pop();
        assert!(c.validate().is_err());
    }
}
