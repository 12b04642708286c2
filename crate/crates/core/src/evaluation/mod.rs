//! Multi-step prediction metrics in volts and latent-space analyses.
//!
//! Everything here reads the raw (unnormalized) dataset; a
//! [`ModelPredictor`] applies the checkpoint's normalization itself.
//! Test windows do not overlap (stride `n_a + n_b`), so each sample is
//! predicted at most once.

mod export;
mod latent;
mod stats;

pub use export::{export_latents, export_metrics, export_predictions, export_report};
pub use latent::{
    latent_across_soc, latent_alignment, latent_at_fixed_soc, latent_report, AlignmentReport,
    FeatureAlignment, LatentPoint, LatentReport,
};
pub use stats::{average_ranks, pearson, spearman, Histogram};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{window_count, CycleSeries, Dataset, NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;
use crate::training::Model;

/// Bins in the error histogram.
pub const HISTOGRAM_BINS: usize = 41;

/// Anything that forecasts `n_b` voltages (in volts) from a raw window.
pub trait Predictor: Sync {
    fn n_a(&self) -> usize;
    fn n_b(&self) -> usize;
    fn predict_volts(&self, window: &WindowSample<'_>) -> Result<Vec<f64>>;
}

/// A trained model plus the normalization it was trained under.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub model: Model,
    pub stats: NormStats,
}

impl ModelPredictor {
    pub fn new(model: Model, stats: NormStats) -> Self {
        Self { model, stats }
    }

    fn normalized_history(&self, w: &WindowSample<'_>) -> RealMatrix {
        let mut h = w.history_channels();
        let n = w.n_a;
        let data = h.as_mut_slice();
        data[..n]
            .iter_mut()
            .for_each(|x| *x = self.stats.current.apply(*x));
        data[n..]
            .iter_mut()
            .for_each(|x| *x = self.stats.voltage.apply(*x));
        h
    }

    fn check(&self, w: &WindowSample<'_>) -> Result<()> {
        if w.n_a != self.model.n_a() || w.n_b != self.model.n_b() {
            return Err(Error::Shape(format!(
                "window is n_a = {}, n_b = {}; model expects n_a = {}, n_b = {}",
                w.n_a,
                w.n_b,
                self.model.n_a(),
                self.model.n_b()
            )));
        }
        Ok(())
    }

    /// Latent of a raw window.
    pub fn encode(&self, w: &WindowSample<'_>) -> Result<Vec<f64>> {
        self.check(w)?;
        let z = self
            .model
            .encoder()
            .forward_channels(self.model.params(), self.normalized_history(w))?;
        Ok(z.into_vec())
    }
}

impl Predictor for ModelPredictor {
    fn n_a(&self) -> usize {
        self.model.n_a()
    }

    fn n_b(&self) -> usize {
        self.model.n_b()
    }

    fn predict_volts(&self, w: &WindowSample<'_>) -> Result<Vec<f64>> {
        self.check(w)?;
        let z = self
            .model
            .encoder()
            .forward_channels(self.model.params(), self.normalized_history(w))?;
        let u: Vec<f64> = w
            .future_inputs()
            .iter()
            .map(|&i| self.stats.current.apply(i))
            .collect();
        let y = self.model.decoder().rollout(self.model.params(), &z, &u)?;
        Ok(y.iter().map(|&v| self.stats.voltage.invert(v)).collect())
    }
}

/// Repeats the last observed voltage over the horizon.
#[derive(Debug, Clone, Copy)]
pub struct PersistencePredictor {
    pub n_a: usize,
    pub n_b: usize,
}

impl Predictor for PersistencePredictor {
    fn n_a(&self) -> usize {
        self.n_a
    }

    fn n_b(&self) -> usize {
        self.n_b
    }

    fn predict_volts(&self, w: &WindowSample<'_>) -> Result<Vec<f64>> {
        Ok(vec![w.last_voltage(); w.n_b])
    }
}

/// Returns the true future voltages (harness check).
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor {
    pub n_a: usize,
    pub n_b: usize,
}

impl Predictor for OraclePredictor {
    fn n_a(&self) -> usize {
        self.n_a
    }

    fn n_b(&self) -> usize {
        self.n_b
    }

    fn predict_volts(&self, w: &WindowSample<'_>) -> Result<Vec<f64>> {
        Ok(w.targets().to_vec())
    }
}

/// Adds a constant offset to another predictor's output.
#[derive(Debug, Clone, Copy)]
pub struct BiasedPredictor<P> {
    pub inner: P,
    pub bias_v: f64,
}

impl<P: Predictor> Predictor for BiasedPredictor<P> {
    fn n_a(&self) -> usize {
        self.inner.n_a()
    }

    fn n_b(&self) -> usize {
        self.inner.n_b()
    }

    fn predict_volts(&self, w: &WindowSample<'_>) -> Result<Vec<f64>> {
        Ok(self
            .inner
            .predict_volts(w)?
            .into_iter()
            .map(|v| v + self.bias_v)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleMetrics {
    pub cell_id: String,
    pub cycle_index: usize,
    pub windows: usize,
    pub rmse_v: f64,
    /// Largest absolute error over the cycle's predictions.
    pub maxabs_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub cycle: usize,
    /// Horizon step, 1-based.
    pub step: usize,
    pub t_s: f64,
    pub y_true_v: f64,
    pub y_pred_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub n_b: usize,
    pub cycles: Vec<CycleMetrics>,
    /// Root of the window-weighted mean of per-cycle mean squared errors.
    pub rmse_v: f64,
    pub maxabs_v: f64,
    pub histogram: Histogram,
    pub predictions: Vec<PredictionRow>,
}

/// Root of the window-count-weighted mean of per-cycle MSE.
pub fn aggregate_rmse(cycles: &[CycleMetrics]) -> f64 {
    let windows: usize = cycles.iter().map(|c| c.windows).sum();
    if windows == 0 {
        return 0.0;
    }
    let weighted: f64 = cycles
        .iter()
        .map(|c| c.windows as f64 * c.rmse_v * c.rmse_v)
        .sum();
    (weighted / windows as f64).sqrt()
}

fn evaluate_cycle<P: Predictor>(
    p: &P,
    cycle: &CycleSeries,
) -> Result<(CycleMetrics, Vec<PredictionRow>)> {
    let (n_a, n_b) = (p.n_a(), p.n_b());
    let count = window_count(cycle.len(), n_a, n_b, n_a + n_b);
    let mut rows = Vec::with_capacity(count * n_b);
    let (mut sse, mut maxabs) = (0.0, 0.0f64);
    for k in 0..count {
        let w = WindowSample {
            cycle,
            start: k * (n_a + n_b),
            n_a,
            n_b,
        };
        let pred = p.predict_volts(&w)?;
        if pred.len() != n_b {
            return Err(Error::Shape(format!(
                "predictor returned {} values for n_b = {n_b}",
                pred.len()
            )));
        }
        for (j, ((&y, &yh), &t)) in w
            .targets()
            .iter()
            .zip(&pred)
            .zip(w.future_times())
            .enumerate()
        {
            if !yh.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite prediction in cycle {}",
                    cycle.cycle_index
                )));
            }
            let e = yh - y;
            sse += e * e;
            maxabs = maxabs.max(e.abs());
            rows.push(PredictionRow {
                cycle: cycle.cycle_index,
                step: j + 1,
                t_s: t,
                y_true_v: y,
                y_pred_v: yh,
            });
        }
    }
    let rmse_v = if count == 0 {
        0.0
    } else {
        (sse / (count * n_b) as f64).sqrt()
    };
    let metrics = CycleMetrics {
        cell_id: cycle.cell_id.clone(),
        cycle_index: cycle.cycle_index,
        windows: count,
        rmse_v,
        maxabs_v: maxabs,
    };
    Ok((metrics, rows))
}

/// Non-overlapping multi-step evaluation over the cycles at `positions` of
/// a raw dataset.
pub fn rollout_metrics<P: Predictor>(
    predictor: &P,
    dataset: &Dataset,
    positions: &[usize],
) -> Result<PredictionReport> {
    if dataset.is_normalized() {
        return Err(Error::Data("evaluation expects the raw dataset".into()));
    }
    if positions.is_empty() {
        return Err(Error::Data("no test cycles to evaluate".into()));
    }
    let per_cycle: Vec<(CycleMetrics, Vec<PredictionRow>)> = positions
        .par_iter()
        .map(|&p| {
            let cycle = dataset
                .cycles
                .get(p)
                .ok_or_else(|| Error::Shape(format!("cycle position {p} out of range")))?;
            evaluate_cycle(predictor, cycle)
        })
        .collect::<Result<_>>()?;
    let mut cycles = Vec::with_capacity(per_cycle.len());
    let mut predictions = Vec::new();
    for (m, rows) in per_cycle {
        cycles.push(m);
        predictions.extend(rows);
    }
    if predictions.is_empty() {
        return Err(Error::Data(format!(
            "test cycles are too short for a single window of {} samples",
            predictor.n_a() + predictor.n_b()
        )));
    }
    let errors: Vec<f64> = predictions
        .iter()
        .map(|r| r.y_pred_v - r.y_true_v)
        .collect();
    Ok(PredictionReport {
        n_b: predictor.n_b(),
        rmse_v: aggregate_rmse(&cycles),
        maxabs_v: cycles.iter().fold(0.0, |m, c| m.max(c.maxabs_v)),
        histogram: Histogram::symmetric(&errors, HISTOGRAM_BINS),
        cycles,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenerateConfig, SimConfig};

    fn fixture() -> Dataset {
        let gen = GenerateConfig {
            cycles: 3,
            ..GenerateConfig::default()
        };
        generate_dataset(&SimConfig::default(), &gen).unwrap()
    }

    #[test]
    fn oracle_is_exact() {
        let ds = fixture();
        let r = rollout_metrics(&OraclePredictor { n_a: 64, n_b: 32 }, &ds, &[0, 2]).unwrap();
        assert_eq!(r.rmse_v, 0.0);
        assert_eq!(r.maxabs_v, 0.0);
        assert_eq!(r.cycles.len(), 2);
        assert_eq!(
            r.predictions.len(),
            r.cycles.iter().map(|c| c.windows * 32).sum::<usize>()
        );
    }

    #[test]
    fn constant_bias_is_reported_exactly() {
        let ds = fixture();
        let p = BiasedPredictor {
            inner: OraclePredictor { n_a: 50, n_b: 20 },
            bias_v: 0.004,
        };
        let r = rollout_metrics(&p, &ds, &[1]).unwrap();
        for c in &r.cycles {
            assert!((c.rmse_v - 0.004).abs() < 1e-12);
            assert!((c.maxabs_v - 0.004).abs() < 1e-12);
        }
    }

    #[test]
    fn two_cycle_weighting() {
        let cycles = vec![
            CycleMetrics {
                cell_id: "A".into(),
                cycle_index: 0,
                windows: 1,
                rmse_v: 0.03,
                maxabs_v: 0.05,
            },
            CycleMetrics {
                cell_id: "A".into(),
                cycle_index: 1,
                windows: 3,
                rmse_v: 0.01,
                maxabs_v: 0.02,
            },
        ];
        // (1 * 9e-4 + 3 * 1e-4) / 4 = 3e-4
        assert!((aggregate_rmse(&cycles) - 3e-4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_test_set() {
        let ds = fixture();
        assert!(rollout_metrics(&OraclePredictor { n_a: 4, n_b: 4 }, &ds, &[]).is_err());
        let long = OraclePredictor {
            n_a: 10_000_000,
            n_b: 4,
        };
        assert!(rollout_metrics(&long, &ds, &[0]).is_err());
    }
}
