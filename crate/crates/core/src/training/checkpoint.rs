//! JSON checkpoint bundle.
//!
//! Floats are written in shortest round-trip form and parsed back exactly,
//! so a save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Model, TrainConfig, TrainHistory};
use crate::data::NormStats;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, RealMatrix};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    train_config: TrainConfig,
    encoder: EncoderConfig,
    norm_stats: NormStats,
    epochs_trained: usize,
    best_epoch: usize,
    history: Vec<EpochRecord>,
    params: Vec<ParamRecord>,
}

/// A loaded model with everything needed to use or resume it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub stats: NormStats,
    pub model: Model,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn epochs_trained(&self) -> usize {
        self.history.epochs_run()
    }
}

/// Writes the bundle to `path` through a temporary file, so a failed write
/// never leaves a partial checkpoint behind.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    config: &TrainConfig,
    stats: &NormStats,
    history: &TrainHistory,
) -> Result<()> {
    let path = path.as_ref();
    if !model.params().values_finite() {
        return Err(Error::Numerical(
            "refusing to checkpoint non-finite parameters".into(),
        ));
    }
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        train_config: config.clone(),
        encoder: model.encoder().config().clone(),
        norm_stats: *stats,
        epochs_trained: history.epochs_run(),
        best_epoch: history.best_epoch,
        history: history.epochs.clone(),
        params: model
            .params()
            .iter()
            .map(|(name, v, _)| ParamRecord {
                name: name.to_owned(),
                rows: v.rows(),
                cols: v.cols(),
                data: v.as_slice().to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::checkpoint("payload", format!("serialization failed: {e}")))?;
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Field named in a serde error message (the first backquoted word).
fn field_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map_or_else(|| "payload".to_owned(), str::to_owned)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::checkpoint("payload", format!("not valid JSON: {e}")))?;
    match value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(Error::checkpoint(
                "format_version",
                format!("found {v}, this build reads {CHECKPOINT_VERSION}"),
            ))
        }
        None => {
            return Err(Error::checkpoint(
                "format_version",
                "missing or not an integer",
            ))
        }
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        Error::checkpoint(field_of(&msg), msg)
    })?;

    let cfg = &file.train_config;
    let enc = &file.encoder;
    if enc.n_a != cfg.n_a || enc.n_xs != cfg.n_xs {
        return Err(Error::checkpoint(
            "encoder",
            format!(
                "encoder is n_a = {}, n_xs = {}; train_config says n_a = {}, n_xs = {}",
                enc.n_a, enc.n_xs, cfg.n_a, cfg.n_xs
            ),
        ));
    }
    if file.history.last().map_or(0, |e| e.epoch) != file.epochs_trained {
        return Err(Error::checkpoint(
            "epochs_trained",
            "disagrees with the recorded history",
        ));
    }

    let mut params = ParamStore::new();
    for (i, p) in file.params.into_iter().enumerate() {
        let m = RealMatrix::from_vec(p.rows, p.cols, p.data)
            .map_err(|e| Error::checkpoint(format!("params[{i}] ({})", p.name), e.to_string()))?;
        params
            .insert(p.name.clone(), m)
            .map_err(|e| Error::checkpoint(format!("params[{i}]"), e.to_string()))?;
    }
    let model = Model::from_params(enc.clone(), cfg.n_b, params)
        .map_err(|e| Error::checkpoint("params", e.to_string()))?;
    Ok(Checkpoint {
        config: file.train_config,
        stats: file.norm_stats,
        model,
        history: TrainHistory {
            epochs: file.history,
            best_epoch: file.best_epoch,
            wall_time_s: 0.0,
        },
    })
}
