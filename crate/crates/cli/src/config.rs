//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tvde_core::cvexpr::{PipelineConfig, TicaStageConfig};
use tvde_core::reweight::Estimator;
use tvde_core::vde::{AdamParams, DEFAULT_ALPHA, DEFAULT_NOISE};
use tvde_core::{FeatureSpec, MetadConfig, MlpSpec, PotentialSpec, Thermostat, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub system: SystemConfig,
    pub simulate: SimulateConfig,
    pub features: FeatureSpec,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub tica: Option<TicaStageConfig>,
    pub vde: VdeConfig,
    pub metad: MetadSection,
    #[serde(default)]
    pub reweight: ReweightConfig,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub source: PotentialSpec,
    pub x0: Vec<f64>,
    /// Thermostat for metadynamics (and for training data unless overridden).
    #[serde(default)]
    pub thermostat: Thermostat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_steps: usize,
    #[serde(default = "default_save_stride")]
    pub save_stride: usize,
    /// Temperature of the unbiased training run, if different.
    #[serde(default)]
    pub kt: Option<f64>,
}

fn default_save_stride() -> usize {
    tvde_core::worldbench::DEFAULT_SAVE_STRIDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdeConfig {
    pub encoder: MlpSpec,
    pub lag: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_batch() -> usize {
    200
}
fn default_noise() -> f64 {
    DEFAULT_NOISE
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadSection {
    /// Integrator steps per walker.
    pub n_steps: usize,
    /// Grid and interval default to the training CV range.
    #[serde(default)]
    pub bias: MetadConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightConfig {
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default)]
    pub reference_state: Option<usize>,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            estimator: default_estimator(),
            bins: default_bins(),
            n_states: default_states(),
            reference_state: None,
        }
    }
}

fn default_estimator() -> Estimator {
    Estimator::Mbar
}
fn default_bins() -> usize {
    50
}
fn default_states() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub target: PotentialSpec,
    /// Target coordinate feeding each source input; identity when absent.
    #[serde(default)]
    pub map: Option<Vec<usize>>,
    /// Start for both systems; defaults to `system.x0`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

/// Per-stage seeds derived from the experiment seed.
pub mod seeds {
    pub const SIMULATE: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const METAD: u64 = 2;
    pub const TRANSFER: u64 = 3;
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        Ok(cfg)
    }

    /// Parses and validates; errors name the offending key path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config key `{path}`: {}", e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.system.source;
        p.validate().context("system.source")?;
        self.system.thermostat.validate().context("system.thermostat")?;
        if self.system.x0.len() != p.dim() {
            bail!("config key `system.x0`: expected {} coordinates, got {}", p.dim(), self.system.x0.len());
        }
        if self.simulate.n_steps == 0 || self.simulate.save_stride == 0 {
            bail!("config key `simulate`: n_steps and save_stride must be >= 1");
        }
        if let Some(kt) = self.simulate.kt {
            if kt.is_nan() || kt <= 0.0 {
                bail!("config key `simulate.kt`: must be > 0");
            }
        }
        self.features.validate(p.dim()).context("features")?;
        self.vde.encoder.validate().context("vde.encoder")?;
        self.train_config().validate().context("vde")?;
        let mut bias = self.metad.bias.clone();
        if bias.grid.is_none() {
            // Placeholder range; the real one comes from the training CV values.
            bias = bias.with_training_range(-1.0, 1.0)?;
        }
        bias.validate().context("metad.bias")?;
        if let Some(kt) = bias.kt {
            if kt != self.system.thermostat.kt {
                bail!("config key `metad.bias.kt`: must equal system.thermostat.kt");
            }
        }
        if self.metad.n_steps == 0 {
            bail!("config key `metad.n_steps`: must be >= 1");
        }
        if self.reweight.n_states == 0 || self.reweight.bins == 0 {
            bail!("config key `reweight`: n_states and bins must be >= 1");
        }
        if let Some(t) = &self.transfer {
            t.target.validate().context("transfer.target")?;
            if t.target.dim() != p.dim() {
                bail!("config key `transfer.target`: dimension {} differs from the source ({})", t.target.dim(), p.dim());
            }
            if let Some(x0) = &t.x0 {
                if x0.len() != p.dim() {
                    bail!("config key `transfer.x0`: expected {} coordinates, got {}", p.dim(), x0.len());
                }
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn training_thermostat(&self) -> Thermostat {
        let mut th = self.system.thermostat;
        if let Some(kt) = self.simulate.kt {
            th.kt = kt;
        }
        th
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.vde.epochs,
            learning_rate: self.vde.learning_rate,
            batch_size: self.vde.batch_size,
            adam: self.vde.adam,
            seed: self.stage_seed(seeds::TRAIN),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            features: self.features.clone(),
            standardize: self.standardize,
            tica: self.tica.clone(),
            vde: self.vde.encoder.clone(),
            lag: self.vde.lag,
            train: self.train_config(),
            noise: self.vde.noise,
            alpha: self.vde.alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        let dw = ExperimentConfig::parse(include_str!("../configs/double_well.toml")).unwrap();
        assert_eq!(dw.system.source.dim(), 1);
        assert_eq!(dw.training_thermostat().kt, 2.5);
        assert_eq!(dw.system.thermostat.kt, 1.0);
        assert!(dw.transfer.is_some());
        let ala = ExperimentConfig::parse(include_str!("../configs/alanine.toml")).unwrap();
        assert_eq!(ala.system.source.dim(), 2);
        assert!(ala.transfer.is_none());
        assert_eq!(ala.reweight.estimator, Estimator::Mbar);
    }

    #[test]
    fn stage_seeds_follow_the_experiment_seed() {
        let mut cfg = ExperimentConfig::parse(include_str!("../configs/double_well.toml")).unwrap();
        cfg.seed = 100;
        assert_eq!(cfg.train_config().seed, 101);
        assert_eq!(cfg.pipeline_config().train.seed, 101);
        assert_eq!(cfg.stage_seed(seeds::METAD), 102);
    }

    #[test]
    fn schema_errors_carry_key_paths() {
        let base = include_str!("../configs/double_well.toml");
        let err = ExperimentConfig::parse(&base.replace("lag = 10", "lag = 10\nlags = 3")).unwrap_err();
        assert!(err.to_string().contains("vde"), "{err}");
        let err = ExperimentConfig::parse(&base.replace("epochs = 3", "epochs = \"three\"")).unwrap_err();
        assert!(err.to_string().contains("vde.epochs"), "{err}");
        let err = ExperimentConfig::parse(&base.replace("x0 = [-1.0]", "x0 = [-1.0, 0.0]")).unwrap_err();
        assert!(err.to_string().contains("system.x0"), "{err}");
        let err = ExperimentConfig::parse(&base.replace("bias_factor = 6.0", "bias_factor = 0.5")).unwrap_err();
        assert!(format!("{err:#}").contains("bias factor"), "{err:#}");
    }
}
