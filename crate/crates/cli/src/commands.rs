use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tsae::data::{discharge_capacity, generate_dataset, write_csv, Dataset};
use tsae::evaluation::{
    export_latents, export_report, latent_across_soc, latent_alignment, latent_at_fixed_soc,
    rollout_metrics, spearman, LatentPoint, ModelPredictor, OraclePredictor, PersistencePredictor,
    PredictionReport, Predictor,
};
use tsae::training::{
    load_checkpoint, prediction_loss, prepare, save_checkpoint, subsample, train, train_from,
    Checkpoint, TrainConfig, TrainHistory,
};
use tsae::ErrorKind;

use crate::config::RunConfigFile;
use crate::{Cli, Command, PredictorKind};

/// Checkpoint file name inside a run directory.
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Windows used to report the final training prediction loss.
const TRAIN_LOSS_WINDOWS: usize = 8192;

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate { out } => {
            if let Some(seed) = cli.seed {
                cfg.data.generate.seed = seed;
            }
            generate(&cfg, out, cli.quiet)
        }
        Command::Train {
            data,
            out_dir,
            sweep,
            resume,
        } => {
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            let raw = cfg.load_data(data.as_deref())?;
            match sweep {
                Some(spec) => train_sweep(&cfg, &raw, out_dir, spec),
                None => train_run(&cfg, &raw, out_dir, resume.as_deref()).map(|_| ()),
            }
        }
        Command::Eval {
            checkpoint,
            data,
            out_dir,
            predictor,
        } => eval(
            &cfg,
            checkpoint.as_deref(),
            data.as_deref(),
            out_dir,
            *predictor,
        ),
        Command::InspectLatent {
            checkpoint,
            data,
            out_dir,
            soc,
            cycle,
            cell,
        } => inspect_latent(
            &cfg,
            checkpoint,
            data.as_deref(),
            out_dir,
            *soc,
            *cycle,
            cell.as_deref(),
        ),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn generate(cfg: &RunConfigFile, out: &Path, quiet: bool) -> Result<()> {
    let ds = generate_dataset(&cfg.data.sim, &cfg.data.generate)?;
    write_csv(&ds, out)?;
    let q_nom = cfg.data.sim.q_nom_ah;
    println!(
        "wrote {} cycles ({} samples) to {}",
        ds.cycles.len(),
        ds.total_samples(),
        out.display()
    );
    if quiet {
        return Ok(());
    }
    println!("cycle  theta_q  theta_r  Q_dis[%]");
    for c in &ds.cycles {
        let q = discharge_capacity(&c.current_a, cfg.data.sim.dt_s, q_nom)?;
        let (tq, tr) = c
            .truth
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |t| (t.theta_q, t.theta_r));
        println!(
            "{:5}  {tq:7.4}  {tr:7.4}  {q:8.3}{}",
            c.cycle_index,
            if c.truncated { "  (truncated)" } else { "" }
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    error: String,
    train_config: &'a TrainConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub n_xs: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_pred: f64,
    /// Prediction loss of the returned model on evenly spaced training windows.
    pub train_pred: f64,
}

fn write_history(history: &TrainHistory, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["epoch", "train_pred", "train_corr", "val_pred"])?;
    for e in &history.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_pred.to_string(),
            e.train_corr.to_string(),
            e.val_pred.to_string(),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
}

fn resume_point(
    path: &Path,
    cfg: &TrainConfig,
    stats: &tsae::data::NormStats,
) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let m = &ckpt.model;
    if (m.n_a(), m.n_b(), m.n_xs()) != (cfg.n_a, cfg.n_b, cfg.n_xs) {
        bail!(tsae::Error::Shape(format!(
            "checkpoint is n_a = {}, n_b = {}, n_xs = {}; config says n_a = {}, n_b = {}, n_xs = {}",
            m.n_a(),
            m.n_b(),
            m.n_xs(),
            cfg.n_a,
            cfg.n_b,
            cfg.n_xs
        )));
    }
    if ckpt.stats != *stats {
        bail!(tsae::Error::Config(
            "normalization statistics differ from the checkpoint; resume with the same data and split".into()
        ));
    }
    log::info!("resuming after epoch {}", ckpt.epochs_trained());
    Ok(ckpt)
}

fn train_run(
    cfg: &RunConfigFile,
    raw: &Dataset,
    dir: &Path,
    resume: Option<&Path>,
) -> Result<RunSummary> {
    create_dir(dir)?;
    cfg.echo(dir)?;
    let tc = cfg.train_config();
    let prep = prepare(
        raw,
        &tc,
        &cfg.eval.holdout(),
        cfg.data.val_fraction,
        cfg.data.split_seed,
    )?;
    log::info!(
        "{} training and {} validation windows, {} test cycles",
        prep.split.train.len(),
        prep.split.validation.len(),
        prep.split.test_cycles.len()
    );
    let trained = match resume {
        None => train(
            &prep.dataset,
            &prep.split.train,
            &prep.split.validation,
            &tc,
        ),
        Some(path) => {
            let ckpt = resume_point(path, &tc, &prep.stats)?;
            train_from(
                ckpt.model,
                ckpt.history,
                &prep.dataset,
                &prep.split.train,
                &prep.split.validation,
                &tc,
            )
        }
    };
    let (model, history) = match trained {
        Ok(t) => t,
        Err(e) => {
            if e.kind() == ErrorKind::Numerical {
                let path = dir.join("diagnostics.json");
                let d = Diagnostics {
                    error: e.to_string(),
                    train_config: &tc,
                };
                std::fs::write(&path, serde_json::to_string_pretty(&d)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
                log::error!("diagnostics written to {}", path.display());
            }
            return Err(e.into());
        }
    };
    save_checkpoint(
        dir.join(CHECKPOINT_FILE),
        &model,
        &tc,
        &prep.stats,
        &history,
    )?;
    write_history(&history, &dir.join("history.csv"))?;
    let train_pred = prediction_loss(
        &model,
        &prep.dataset,
        &subsample(&prep.split.train, Some(TRAIN_LOSS_WINDOWS)),
    )?;
    let summary = RunSummary {
        n_xs: tc.n_xs,
        epochs: history.epochs_run(),
        best_epoch: history.best_epoch,
        best_val_pred: history.best_val(),
        train_pred,
    };
    println!(
        "{}: {} epochs (best {}), val L_pred {:.4e}, train L_pred {:.4e}, {:.1} s",
        dir.display(),
        summary.epochs,
        summary.best_epoch,
        summary.best_val_pred,
        summary.train_pred,
        history.wall_time_s
    );
    Ok(summary)
}

/// Parses `n_xs=1..5` or `n_xs=1,2,4`.
pub fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    let bad = || {
        tsae::Error::Config(format!(
            "sweep `{spec}`: expected `n_xs=A..B` or `n_xs=A,B,...`"
        ))
    };
    let (key, values) = spec.split_once('=').ok_or_else(bad)?;
    if key.trim() != "n_xs" {
        bail!(tsae::Error::Config(format!(
            "sweep key `{}` is not supported; only `n_xs` is",
            key.trim()
        )));
    }
    let values: Vec<usize> = if let Some((a, b)) = values.split_once("..") {
        let range: RangeInclusive<usize> =
            a.trim().parse().map_err(|_| bad())?..=b.trim().parse().map_err(|_| bad())?;
        range.collect()
    } else {
        values
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        bail!(bad());
    }
    Ok(values)
}

fn train_sweep(cfg: &RunConfigFile, raw: &Dataset, out_dir: &Path, spec: &str) -> Result<()> {
    let values = parse_sweep(spec)?;
    create_dir(out_dir)?;
    let mut summaries = Vec::with_capacity(values.len());
    for n_xs in values {
        let mut c = cfg.clone();
        c.model.n_xs = n_xs;
        summaries.push(train_run(
            &c,
            raw,
            &out_dir.join(format!("n_xs_{n_xs}")),
            None,
        )?);
    }
    let path = out_dir.join("sweep.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for s in &summaries {
        w.serialize(s)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    println!("n_xs  epochs  best_val_pred  train_pred");
    for s in &summaries {
        println!(
            "{:4}  {:6}  {:13.4e}  {:10.4e}",
            s.n_xs, s.epochs, s.best_val_pred, s.train_pred
        );
    }
    Ok(())
}

fn model_predictor(path: &Path) -> Result<ModelPredictor> {
    let ckpt = load_checkpoint(path)?;
    Ok(ModelPredictor::new(ckpt.model, ckpt.stats))
}

fn write_histogram(report: &PredictionReport, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["lo_v", "hi_v", "count"])?;
    let h = &report.histogram;
    for (k, count) in h.counts.iter().enumerate() {
        w.write_record([
            h.edges[k].to_string(),
            h.edges[k + 1].to_string(),
            count.to_string(),
        ])?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
}

fn evaluate<P: Predictor>(
    cfg: &RunConfigFile,
    p: &P,
    raw: &Dataset,
    latents: Option<&ModelPredictor>,
    out_dir: &Path,
) -> Result<()> {
    let test = cfg.eval.holdout().test_cycles(raw)?;
    let report = rollout_metrics(p, raw, &test)?;
    let baseline = rollout_metrics(
        &PersistencePredictor {
            n_a: p.n_a(),
            n_b: p.n_b(),
        },
        raw,
        &test,
    )?;
    let (points, n_xs): (Vec<LatentPoint>, usize) = match latents {
        Some(m) => {
            let e = &cfg.eval;
            match latent_at_fixed_soc(m, raw, e.soc_target, e.soc_tolerance, cfg.data.sim.q_nom_ah)
            {
                Ok(points) => (points, m.model.n_xs()),
                Err(err) => {
                    log::warn!("no fixed-SOC latents: {err}");
                    (Vec::new(), m.model.n_xs())
                }
            }
        }
        None => (Vec::new(), 0),
    };
    create_dir(out_dir)?;
    cfg.echo(out_dir)?;
    export_report(&report, &points, n_xs, out_dir)?;
    write_histogram(&report, &out_dir.join("histogram.csv"))?;
    let windows: usize = report.cycles.iter().map(|c| c.windows).sum();
    println!(
        "RMSE {:.3} mV, max abs {:.3} mV over {windows} windows in {} test cycles",
        report.rmse_v * 1e3,
        report.maxabs_v * 1e3,
        report.cycles.len()
    );
    let ratio = if baseline.rmse_v > 0.0 {
        report.rmse_v / baseline.rmse_v
    } else {
        f64::NAN
    };
    println!(
        "persistence baseline RMSE {:.3} mV (ratio {ratio:.3})",
        baseline.rmse_v * 1e3
    );
    Ok(())
}

fn eval(
    cfg: &RunConfigFile,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    out_dir: &Path,
    kind: PredictorKind,
) -> Result<()> {
    let model = checkpoint.map(model_predictor).transpose()?;
    let raw = cfg.load_data(data)?;
    let (n_a, n_b) = match &model {
        Some(m) => (m.n_a(), m.n_b()),
        None => (cfg.model.n_a, cfg.model.n_b),
    };
    match kind {
        PredictorKind::Model => {
            let Some(m) = &model else {
                bail!(tsae::Error::Config(
                    "the model predictor needs --checkpoint".into()
                ));
            };
            evaluate(cfg, m, &raw, Some(m), out_dir)
        }
        PredictorKind::Oracle => evaluate(
            cfg,
            &OraclePredictor { n_a, n_b },
            &raw,
            model.as_ref(),
            out_dir,
        ),
        PredictorKind::Persistence => evaluate(
            cfg,
            &PersistencePredictor { n_a, n_b },
            &raw,
            model.as_ref(),
            out_dir,
        ),
    }
}

fn find_cycle(raw: &Dataset, cycle: usize, cell: Option<&str>) -> Result<usize> {
    let matches: Vec<usize> = raw
        .cycles
        .iter()
        .enumerate()
        .filter(|(_, c)| c.cycle_index == cycle && cell.is_none_or(|id| c.cell_id == id))
        .map(|(p, _)| p)
        .collect();
    match matches.as_slice() {
        [p] => Ok(*p),
        [] => bail!(tsae::Error::Config(match cell {
            Some(id) => format!("cell `{id}` has no cycle {cycle}"),
            None => format!("no cycle {cycle} in the dataset"),
        })),
        _ => bail!(tsae::Error::Config(format!(
            "cycle {cycle} exists in several cells; pick one with --cell"
        ))),
    }
}

fn inspect_latent(
    cfg: &RunConfigFile,
    checkpoint: &Path,
    data: Option<&Path>,
    out_dir: &Path,
    soc: Option<f64>,
    cycle: Option<usize>,
    cell: Option<&str>,
) -> Result<()> {
    let p = model_predictor(checkpoint)?;
    let raw = cfg.load_data(data)?;
    let n_xs = p.model.n_xs();
    let q_nom = cfg.data.sim.q_nom_ah;
    let soc = if soc.is_none() && cycle.is_none() {
        Some(cfg.eval.soc_target)
    } else {
        soc
    };
    let position = cycle.map(|c| find_cycle(&raw, c, cell)).transpose()?;
    create_dir(out_dir)?;
    cfg.echo(out_dir)?;

    if let Some(target) = soc {
        let points = latent_at_fixed_soc(&p, &raw, target, cfg.eval.soc_tolerance, q_nom)?;
        let path: PathBuf = out_dir.join("latents_fixed_soc.csv");
        export_latents(&points, n_xs, &path)?;
        let index: Vec<f64> = points.iter().map(|q| q.cycle_index as f64).collect();
        let rho: Vec<String> = (0..n_xs)
            .map(|i| {
                format!(
                    "{:+.3}",
                    spearman(
                        &points.iter().map(|q| q.latent[i]).collect::<Vec<_>>(),
                        &index
                    )
                )
            })
            .collect();
        println!(
            "SOC {target}: {} cycles written to {}; Spearman vs cycle index per feature [{}]",
            points.len(),
            path.display(),
            rho.join(", ")
        );
    }
    if let Some(position) = position {
        let c = &raw.cycles[position];
        let traj = latent_across_soc(&p, c, q_nom)?;
        let path = out_dir.join(format!("latents_cycle_{}.csv", c.cycle_index));
        export_latents(&traj, n_xs, &path)?;
        let a = latent_alignment(&traj)?;
        println!(
            "cycle {} of `{}`: {} windows written to {}; best |Pearson| vs SOC {:.3}",
            c.cycle_index,
            c.cell_id,
            traj.len(),
            path.display(),
            a.best_soc
        );
    }
    Ok(())
}
