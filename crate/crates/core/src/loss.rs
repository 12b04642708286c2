//! Training objective: mean-squared multi-step prediction error plus a
//! λ-weighted penalty rewarding lag-1 autocorrelation of each latent feature.
//!
//! For a group of latents from consecutive window starts of one cycle, the
//! lag-1 correlation of feature `i` is the Pearson correlation between the
//! lead series `x_1..x_{T-1}` and the lag series `x_0..x_{T-2}`, each centred
//! on its own mean. Per-group correlations are averaged over the groups in
//! a batch, and the penalty is `L_corr = -Σ_i |r̄_i|`, so `L_corr` lies in
//! `[-n_xs, 0]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this variance a lag series is treated as constant and its
/// correlation (and gradient) is zero.
pub const VARIANCE_GUARD: f64 = 1e-12;

/// Latents of consecutive stride-1 windows from a single cycle, in time
/// order. Each inner vector has length `n_xs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub cycle: usize,
    pub latents: Vec<Vec<f64>>,
}

impl LatentBatch {
    pub fn new(cycle: usize, latents: Vec<Vec<f64>>) -> Result<Self> {
        let batch = Self { cycle, latents };
        batch.validate()?;
        Ok(batch)
    }

    pub fn n_xs(&self) -> usize {
        self.latents.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        if self.latents.len() < 3 {
            return Err(Error::Data(format!(
                "lag-1 correlation needs at least 3 latents per cycle group, got {}",
                self.latents.len()
            )));
        }
        let n = self.n_xs();
        if n == 0 || self.latents.iter().any(|l| l.len() != n) {
            return Err(Error::Shape(
                "latents in a group must share one non-zero dimension".into(),
            ));
        }
        Ok(())
    }

    /// Per-feature means over the group.
    pub fn feature_means(&self) -> Vec<f64> {
        let n = self.n_xs();
        let mut means = vec![0.0; n];
        for l in &self.latents {
            for (m, v) in means.iter_mut().zip(l) {
                *m += v;
            }
        }
        let t = self.latents.len() as f64;
        means.iter_mut().for_each(|m| *m /= t);
        means
    }

    fn feature(&self, i: usize) -> Vec<f64> {
        self.latents.iter().map(|l| l[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred: f64,
    pub corr: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Centred lead/lag series and their sums, shared by forward and backward.
struct LagPearson {
    lead: Vec<f64>,
    lag: Vec<f64>,
    s_ll: f64,
    s_gg: f64,
    r: f64,
    guarded: bool,
}

fn lag_pearson(series: &[f64]) -> LagPearson {
    let lead = &series[1..];
    let lag = &series[..series.len() - 1];
    let n = lead.len() as f64;
    let mean_lead = lead.iter().sum::<f64>() / n;
    let mean_lag = lag.iter().sum::<f64>() / n;
    let lead: Vec<f64> = lead.iter().map(|v| v - mean_lead).collect();
    let lag: Vec<f64> = lag.iter().map(|v| v - mean_lag).collect();
    let s_ll: f64 = lead.iter().map(|v| v * v).sum();
    let s_gg: f64 = lag.iter().map(|v| v * v).sum();
    let guarded = s_ll / n < VARIANCE_GUARD || s_gg / n < VARIANCE_GUARD;
    let r = if guarded {
        0.0
    } else {
        let s_lg: f64 = lead.iter().zip(&lag).map(|(a, b)| a * b).sum();
        (s_lg / (s_ll * s_gg).sqrt()).clamp(-1.0, 1.0)
    };
    LagPearson {
        lead,
        lag,
        s_ll,
        s_gg,
        r,
        guarded,
    }
}

/// Mean squared error over every entry; slices are flattened `batch x n_b`.
pub fn mse_pred_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Data("prediction loss over an empty batch".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / predictions.len() as f64)
}

/// Gradient of [`mse_pred_loss`] with respect to each prediction, given the
/// total number of entries the mean is taken over.
pub fn mse_pred_grad(predictions: &[f64], targets: &[f64], total_entries: usize) -> Vec<f64> {
    let scale = 2.0 / total_entries as f64;
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| scale * (p - t))
        .collect()
}

pub fn lag1_autocorrelation(batch: &LatentBatch, feature: usize) -> Result<f64> {
    batch.validate()?;
    if feature >= batch.n_xs() {
        return Err(Error::Shape(format!(
            "feature {feature} out of range for n_xs = {}",
            batch.n_xs()
        )));
    }
    Ok(lag_pearson(&batch.feature(feature)).r)
}

/// Result of [`correlation_loss`]: the loss and the correlations behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationLoss {
    pub value: f64,
    /// Group-averaged lag-1 correlation per feature.
    pub mean_r: Vec<f64>,
    /// `per_group[g][i]`: correlation of feature `i` in group `g`.
    pub per_group: Vec<Vec<f64>>,
}

pub fn correlation_loss(groups: &[LatentBatch], n_xs: usize) -> Result<CorrelationLoss> {
    if groups.is_empty() {
        return Err(Error::Data(
            "correlation loss needs at least one cycle group".into(),
        ));
    }
    let mut per_group = Vec::with_capacity(groups.len());
    for g in groups {
        g.validate()?;
        if g.n_xs() != n_xs {
            return Err(Error::Shape(format!(
                "group latents have n_xs = {}, expected {n_xs}",
                g.n_xs()
            )));
        }
        per_group.push(
            (0..n_xs)
                .map(|i| lag_pearson(&g.feature(i)).r)
                .collect::<Vec<_>>(),
        );
    }
    let k = groups.len() as f64;
    let mean_r: Vec<f64> = (0..n_xs)
        .map(|i| per_group.iter().map(|r| r[i]).sum::<f64>() / k)
        .collect();
    let value = -mean_r.iter().map(|r| r.abs()).sum::<f64>();
    Ok(CorrelationLoss {
        value,
        mean_r,
        per_group,
    })
}

/// Gradient of `upstream * L_corr` with respect to every latent entry:
/// `grads[g][t][i]` for group `g`, time `t`, feature `i`.
///
/// `|r̄|` uses the sign of the group average; at `r̄ = 0` the subgradient 0
/// is taken.
pub fn correlation_loss_backward(
    groups: &[LatentBatch],
    forward: &CorrelationLoss,
    upstream: f64,
) -> Vec<Vec<Vec<f64>>> {
    let k = groups.len() as f64;
    groups
        .iter()
        .map(|g| {
            let t_len = g.latents.len();
            let n_xs = g.n_xs();
            let mut out = vec![vec![0.0; n_xs]; t_len];
            for i in 0..n_xs {
                let coeff =
                    -upstream * forward.mean_r[i].signum() * f64::from(forward.mean_r[i] != 0.0)
                        / k;
                if coeff == 0.0 {
                    continue;
                }
                let p = lag_pearson(&g.feature(i));
                if p.guarded {
                    continue;
                }
                let denom = (p.s_ll * p.s_gg).sqrt();
                // dr/dlead_t and dr/dlag_t; centering terms vanish because
                // the centred series sum to zero
                for t in 0..t_len - 1 {
                    let d_lead = p.lag[t] / denom - p.r * p.lead[t] / p.s_ll;
                    let d_lag = p.lead[t] / denom - p.r * p.lag[t] / p.s_gg;
                    out[t + 1][i] += coeff * d_lead;
                    out[t][i] += coeff * d_lag;
                }
            }
            out
        })
        .collect()
}

pub fn total_loss(pred: f64, corr: f64, lambda: f64) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "correlation weight λ must be non-negative, got {lambda}"
        )));
    }
    Ok(LossBreakdown {
        pred,
        corr,
        lambda,
        total: pred + lambda * corr,
    })
}
