//! Latent-space analyses: one latent per cycle at a fixed SOC, the latent
//! trajectory through one discharge, and alignment with ground truth.

use rayon::prelude::*;
use serde::Serialize;

use super::stats::{pearson, spearman};
use super::ModelPredictor;
use crate::data::{window_count, CycleSeries, Dataset, WindowSample};
use crate::error::{Error, Result};
use crate::loss::{lag1_autocorrelation, LatentBatch};

/// SOC assumed at the start of a cycle when coulomb counting a proxy.
pub const SOC_PROXY_START: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentPoint {
    pub cell_id: String,
    pub cycle_index: usize,
    pub window_start: usize,
    /// SOC at the last history sample (ground truth or coulomb proxy).
    pub soc: f64,
    pub theta_q: Option<f64>,
    pub latent: Vec<f64>,
}

fn point(p: &ModelPredictor, cycle: &CycleSeries, start: usize, soc: f64) -> Result<LatentPoint> {
    let w = WindowSample {
        cycle,
        start,
        n_a: p.model.n_a(),
        n_b: p.model.n_b(),
    };
    Ok(LatentPoint {
        cell_id: cycle.cell_id.clone(),
        cycle_index: cycle.cycle_index,
        window_start: start,
        soc,
        theta_q: cycle.truth.as_ref().map(|t| t.theta_q),
        latent: p.encode(&w)?,
    })
}

/// Per cycle, the latent of the window whose history ends nearest
/// `soc_target`, kept only when within `tolerance`.
pub fn latent_at_fixed_soc(
    p: &ModelPredictor,
    dataset: &Dataset,
    soc_target: f64,
    tolerance: f64,
    q_nom_ah: f64,
) -> Result<Vec<LatentPoint>> {
    let (n_a, n_b) = (p.model.n_a(), p.model.n_b());
    let found: Vec<Option<LatentPoint>> = dataset
        .cycles
        .par_iter()
        .map(|cycle| {
            let count = window_count(cycle.len(), n_a, n_b, 1);
            if count == 0 {
                return Ok(None);
            }
            let soc = cycle.soc_or_proxy(q_nom_ah, SOC_PROXY_START);
            let mut best: Option<(usize, f64)> = None;
            for start in 0..count {
                let d = (soc[start + n_a - 1] - soc_target).abs();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((start, d));
                }
            }
            match best {
                Some((start, d)) if d <= tolerance => {
                    point(p, cycle, start, soc[start + n_a - 1]).map(Some)
                }
                _ => Ok(None),
            }
        })
        .collect::<Result<_>>()?;
    let points: Vec<LatentPoint> = found.into_iter().flatten().collect();
    if points.is_empty() {
        return Err(Error::Data(format!(
            "no cycle has a window ending within {tolerance} of SOC {soc_target}"
        )));
    }
    Ok(points)
}

/// Stride-1 latents through one cycle, labelled with history-end SOC.
pub fn latent_across_soc(
    p: &ModelPredictor,
    cycle: &CycleSeries,
    q_nom_ah: f64,
) -> Result<Vec<LatentPoint>> {
    let n_a = p.model.n_a();
    let count = window_count(cycle.len(), n_a, p.model.n_b(), 1);
    if count < 2 {
        return Err(Error::Data(format!(
            "cycle {} of `{}` yields {count} windows; a trajectory needs at least 2",
            cycle.cycle_index, cycle.cell_id
        )));
    }
    let soc = cycle.soc_or_proxy(q_nom_ah, SOC_PROXY_START);
    (0..count)
        .into_par_iter()
        .map(|s| point(p, cycle, s, soc[s + n_a - 1]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureAlignment {
    pub feature: usize,
    pub pearson_soc: f64,
    pub spearman_soc: f64,
    pub pearson_theta_q: Option<f64>,
    pub spearman_theta_q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub features: Vec<FeatureAlignment>,
    /// Largest |Pearson| against SOC over features.
    pub best_soc: f64,
    /// Largest |Pearson| against theta_q, when every point carries it.
    pub best_theta_q: Option<f64>,
}

pub fn latent_alignment(points: &[LatentPoint]) -> Result<AlignmentReport> {
    let first = points
        .first()
        .ok_or_else(|| Error::Data("no latent points to align".into()))?;
    let n_xs = first.latent.len();
    if points.iter().any(|p| p.latent.len() != n_xs) {
        return Err(Error::Shape("latent points disagree on n_xs".into()));
    }
    let soc: Vec<f64> = points.iter().map(|p| p.soc).collect();
    let theta: Option<Vec<f64>> = points.iter().map(|p| p.theta_q).collect();
    let features: Vec<FeatureAlignment> = (0..n_xs)
        .map(|i| {
            let x: Vec<f64> = points.iter().map(|p| p.latent[i]).collect();
            FeatureAlignment {
                feature: i,
                pearson_soc: pearson(&x, &soc),
                spearman_soc: spearman(&x, &soc),
                pearson_theta_q: theta.as_ref().map(|t| pearson(&x, t)),
                spearman_theta_q: theta.as_ref().map(|t| spearman(&x, t)),
            }
        })
        .collect();
    let best_soc = features
        .iter()
        .fold(0.0f64, |m, f| m.max(f.pearson_soc.abs()));
    let best_theta_q = theta.as_ref().map(|_| {
        features
            .iter()
            .fold(0.0f64, |m, f| m.max(f.pearson_theta_q.unwrap_or(0.0).abs()))
    });
    Ok(AlignmentReport {
        features,
        best_soc,
        best_theta_q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentReport {
    pub fixed_soc: Vec<LatentPoint>,
    pub trajectory: Vec<LatentPoint>,
    /// Lag-1 autocorrelation of each feature along the trajectory.
    pub lag1: Vec<f64>,
    pub trajectory_alignment: AlignmentReport,
}

/// Fixed-SOC points over the dataset plus the trajectory of the cycle at
/// `trajectory_position`.
pub fn latent_report(
    p: &ModelPredictor,
    dataset: &Dataset,
    soc_target: f64,
    tolerance: f64,
    trajectory_position: usize,
    q_nom_ah: f64,
) -> Result<LatentReport> {
    let cycle = dataset
        .cycles
        .get(trajectory_position)
        .ok_or_else(|| Error::Config(format!("no cycle at position {trajectory_position}")))?;
    let fixed_soc = latent_at_fixed_soc(p, dataset, soc_target, tolerance, q_nom_ah)?;
    let trajectory = latent_across_soc(p, cycle, q_nom_ah)?;
    let lag1 = if trajectory.len() >= 3 {
        let batch = LatentBatch::new(
            cycle.cycle_index,
            trajectory.iter().map(|t| t.latent.clone()).collect(),
        )?;
        (0..p.model.n_xs())
            .map(|i| lag1_autocorrelation(&batch, i))
            .collect::<Result<_>>()?
    } else {
        vec![0.0; p.model.n_xs()]
    };
    let trajectory_alignment = latent_alignment(&trajectory)?;
    Ok(LatentReport {
        fixed_soc,
        trajectory,
        lag1,
        trajectory_alignment,
    })
}
