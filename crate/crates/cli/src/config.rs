//! The run configuration file: one JSON document with `data`, `model`,
//! `train` and `eval` sections. Every key is optional; unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tsae::data::{generate_dataset, load_csv, Dataset, GenerateConfig, Holdout, SimConfig};
use tsae::encoder::ConvLayerSpec;
use tsae::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: Source,
    /// CSV file when `source` is `csv`.
    pub path: Option<PathBuf>,
    pub sim: SimConfig,
    pub generate: GenerateConfig,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            path: None,
            sim: SimConfig::default(),
            generate: GenerateConfig::default(),
            val_fraction: 0.2,
            split_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_a: usize,
    pub n_b: usize,
    pub n_xs: usize,
    /// Conv schedule; omitted means the default for `n_a`.
    pub encoder_layers: Option<Vec<ConvLayerSpec>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            n_a: t.n_a,
            n_b: t.n_b,
            n_xs: t.n_xs,
            encoder_layers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub contiguous_run_length: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub groups_per_epoch: Option<usize>,
    pub validation_windows: Option<usize>,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            contiguous_run_length: t.contiguous_run_length,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            groups_per_epoch: t.groups_per_epoch,
            validation_windows: t.validation_windows,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Cells held out for testing; when empty the last
    /// `holdout_last_cycles` cycles of each cell are held out instead.
    pub holdout_cells: Vec<String>,
    pub holdout_last_cycles: usize,
    pub soc_target: f64,
    pub soc_tolerance: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            holdout_cells: Vec::new(),
            holdout_last_cycles: 10,
            soc_target: 0.8,
            soc_tolerance: 0.01,
        }
    }
}

impl EvalSection {
    pub fn holdout(&self) -> Holdout {
        if self.holdout_cells.is_empty() {
            Holdout::LastCycles(self.holdout_last_cycles)
        } else {
            Holdout::Cells(self.holdout_cells.clone())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfigFile {
    /// Reads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))?;
        cfg.data.sim.validate().context("config key `data.sim`")?;
        if !(cfg.data.val_fraction > 0.0 && cfg.data.val_fraction < 1.0) {
            bail!(tsae::Error::Config(format!(
                "`data.val_fraction` must lie in (0, 1), got {}",
                cfg.data.val_fraction
            )));
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.model, &self.train);
        TrainConfig {
            n_a: m.n_a,
            n_b: m.n_b,
            n_xs: m.n_xs,
            lambda: t.lambda,
            batch_size: t.batch_size,
            contiguous_run_length: t.contiguous_run_length,
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            groups_per_epoch: t.groups_per_epoch,
            validation_windows: t.validation_windows,
            clip_norm: t.clip_norm,
            encoder_layers: m.encoder_layers.clone(),
        }
    }

    /// The raw dataset: `--data` when given, otherwise the configured source.
    pub fn load_data(&self, data: Option<&Path>) -> anyhow::Result<Dataset> {
        if let Some(path) = data {
            return Ok(load_csv(path)?);
        }
        match self.data.source {
            Source::Synthetic => {
                log::info!("generating {} synthetic cycles", self.data.generate.cycles);
                Ok(generate_dataset(&self.data.sim, &self.data.generate)?)
            }
            Source::Csv => match &self.data.path {
                Some(path) => Ok(load_csv(path)?),
                None => bail!(tsae::Error::Config(
                    "`data.path` is required when `data.source` is `csv`".into()
                )),
            },
        }
    }

    /// Writes the effective configuration as `config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
