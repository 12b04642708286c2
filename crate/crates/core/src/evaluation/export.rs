//! Plot-ready CSV reports: `predictions.csv`, `latents.csv`, `metrics.csv`.

use std::path::Path;

use super::{LatentPoint, PredictionReport};
use crate::error::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cycle,step,t_s,y_true_v,y_pred_v`
pub fn export_predictions(report: &PredictionReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["cycle", "step", "t_s", "y_true_v", "y_pred_v"])
        .map_err(err)?;
    for r in &report.predictions {
        w.write_record([
            r.cycle.to_string(),
            r.step.to_string(),
            r.t_s.to_string(),
            r.y_true_v.to_string(),
            r.y_pred_v.to_string(),
        ])
        .map_err(err)?;
    }
    finish(w, path)
}

/// `cycle,rmse_v,maxabs_v`
pub fn export_metrics(report: &PredictionReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["cycle", "rmse_v", "maxabs_v"])
        .map_err(err)?;
    for c in &report.cycles {
        w.write_record([
            c.cycle_index.to_string(),
            c.rmse_v.to_string(),
            c.maxabs_v.to_string(),
        ])
        .map_err(err)?;
    }
    finish(w, path)
}

/// `cycle,window_start,soc,x1..x{n_xs}`; header only when `points` is empty.
pub fn export_latents(points: &[LatentPoint], n_xs: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    let mut header = vec![
        "cycle".to_owned(),
        "window_start".to_owned(),
        "soc".to_owned(),
    ];
    header.extend((1..=n_xs).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(err)?;
    for p in points {
        if p.latent.len() != n_xs {
            return Err(Error::Shape(format!(
                "latent of length {} for n_xs = {n_xs}",
                p.latent.len()
            )));
        }
        let mut row = vec![
            p.cycle_index.to_string(),
            p.window_start.to_string(),
            p.soc.to_string(),
        ];
        row.extend(p.latent.iter().map(f64::to_string));
        w.write_record(&row).map_err(err)?;
    }
    finish(w, path)
}

/// Writes all three reports into `dir`.
pub fn export_report(
    report: &PredictionReport,
    latents: &[LatentPoint],
    n_xs: usize,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    export_predictions(report, dir.join("predictions.csv"))?;
    export_metrics(report, dir.join("metrics.csv"))?;
    export_latents(latents, n_xs, dir.join("latents.csv"))
}
