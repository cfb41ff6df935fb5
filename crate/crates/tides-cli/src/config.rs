//! Versioned pipeline configuration.
//!
//! A single JSON file (`--config`) carries the knobs for every stage;
//! omitted keys fall back to the defaults below, which mirror the
//! reference experiment so the zero-flag pipeline is the benchmark run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tides::data::SynthConfig;
use tides::error::{Result, TidesError};
use tides::model::TidesConfig;
use tides::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub synth: SynthSection,
    pub cluster: ClusterSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluate: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 7,
            synth: SynthSection::default(),
            cluster: ClusterSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            evaluate: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub regions: usize,
    pub days: usize,
    pub spatial_corr: f64,
    pub noise_std: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { regions: 40, days: 28, spatial_corr: 0.7, noise_std: 0.3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSection {
    pub k_clusters: usize,
    pub knn: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { k_clusters: 4, knn: 5, restarts: 8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub history: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub backbone_layers: usize,
    pub prompt_max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = TidesConfig::default();
        Self {
            history: c.history,
            horizon: c.horizon,
            d_model: c.d_model,
            n_heads: c.n_heads,
            patch_len: c.patch_len,
            stride: c.stride,
            backbone_layers: c.backbone_layers,
            prompt_max_len: c.prompt_max_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    /// Subsampling stride over window start indices for training samples.
    pub window_stride: usize,
    pub val_stride: usize,
    /// Chronological split fractions.
    pub split: (f64, f64, f64),
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 16,
            epochs: 30,
            patience: 5,
            weight_decay: 0.0,
            window_stride: 16,
            val_stride: 32,
            split: (0.7, 0.1, 0.2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub test_stride: usize,
    pub mape_floor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { test_stride: 8, mape_floor: tides::metrics::MAPE_FLOOR }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if cfg.version != CONFIG_VERSION {
            return Err(TidesError::validation(format!(
                "config: unsupported version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_regions: self.synth.regions,
            days: self.synth.days,
            seed: self.seed,
            spatial_corr_strength: self.synth.spatial_corr,
            noise_std: self.synth.noise_std,
            ..SynthConfig::default()
        }
    }

    pub fn tides_config(&self) -> TidesConfig {
        TidesConfig {
            history: self.model.history,
            horizon: self.model.horizon,
            d_model: self.model.d_model,
            n_heads: self.model.n_heads,
            patch_len: self.model.patch_len,
            stride: self.model.stride,
            backbone_layers: self.model.backbone_layers,
            prompt_max_len: self.model.prompt_max_len,
            e_low_dim: self.model.d_model,
            ..TidesConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            max_epochs: self.train.epochs,
            patience: self.train.patience,
            weight_decay: self.train.weight_decay,
            seed: self.seed,
        }
    }
}
