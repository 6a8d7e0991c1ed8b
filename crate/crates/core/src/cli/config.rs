//! Run configuration: a TOML file of top-level keys. Keys that are not run
//! options override fields of the chosen training preset; nested field
//! settings use dotted keys such as `field.grid.levels = 8`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::trainer::{Ablation, TrainConfig};

use super::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// [`TrainConfig::default`].
    Default,
    /// [`TrainConfig::microstructure`].
    Microstructure,
    /// [`TrainConfig::desk`].
    Desk,
}

impl Preset {
    pub fn config(self) -> TrainConfig {
        match self {
            Preset::Default => TrainConfig::default(),
            Preset::Microstructure => TrainConfig::microstructure(),
            Preset::Desk => TrainConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunKeys {
    #[serde(default = "default_preset")]
    preset: Preset,
    #[serde(default)]
    dataset: Option<PathBuf>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "default_resolution")]
    mesh_resolution: usize,
    #[serde(default = "default_eval_samples")]
    eval_samples: usize,
    #[serde(default = "default_true")]
    baselines: bool,
}

fn default_preset() -> Preset {
    Preset::Default
}
fn default_resolution() -> usize {
    256
}
fn default_eval_samples() -> usize {
    256
}
fn default_true() -> bool {
    true
}

const RUN_KEYS: [&str; 6] = ["preset", "dataset", "out", "mesh_resolution", "eval_samples", "baselines"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mesh_resolution: usize,
    /// Samples per ray when rendering maps for evaluation.
    pub eval_samples: usize,
    /// Score the coarse-input and photometric-stereo rows as well.
    pub baselines: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_preset(Preset::Default)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn with_preset(preset: Preset) -> Self {
        Self {
            preset,
            train: preset.config(),
            dataset: None,
            out: None,
            mesh_resolution: default_resolution(),
            eval_samples: default_eval_samples(),
            baselines: true,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let (run, train): (toml::Table, toml::Table) = table
            .into_iter()
            .partition(|(k, _)| RUN_KEYS.contains(&k.as_str()));
        let run: RunKeys = toml::Value::Table(run)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let base = toml::Value::try_from(run.preset.config()).map_err(|e| CliError::Config(e.to_string()))?;
        let toml::Value::Table(mut merged) = base else {
            unreachable!("a struct serialises to a table");
        };
        merge(&mut merged, train);
        let train: TrainConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let cfg = Self {
            preset: run.preset,
            train,
            dataset: run.dataset,
            out: run.out,
            mesh_resolution: run.mesh_resolution,
            eval_samples: run.eval_samples,
            baselines: run.baselines,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.mesh_resolution < 8 {
            return Err(CliError::Config(format!(
                "mesh_resolution must be >= 8, got {}",
                self.mesh_resolution
            )));
        }
        if self.eval_samples < 2 {
            return Err(CliError::Config(format!("eval_samples must be >= 2, got {}", self.eval_samples)));
        }
        Ok(())
    }

    /// Every setting as TOML, readable back by [`RunConfig::parse`].
    pub fn to_toml(&self) -> Result<String, CliError> {
        let run = RunKeys {
            preset: self.preset,
            dataset: self.dataset.clone(),
            out: self.out.clone(),
            mesh_resolution: self.mesh_resolution,
            eval_samples: self.eval_samples,
            baselines: self.baselines,
        };
        let toml::Value::Table(mut t) = toml::Value::try_from(&run).map_err(|e| CliError::Config(e.to_string()))?
        else {
            unreachable!("a struct serialises to a table");
        };
        let toml::Value::Table(train) =
            toml::Value::try_from(&self.train).map_err(|e| CliError::Config(e.to_string()))?
        else {
            unreachable!("a struct serialises to a table");
        };
        t.extend(train);
        toml::to_string(&t).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.train.ablation = ablation;
    }
}
