//! Experiment configuration, read from TOML. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//!
//! [memory]
//! k = 4
//! momentum = 0.2
//!
//! [loss]
//! scope = "dscl"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasim::DomainSpec;
use crate::encoder::{AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, SynthesisConfig};
use crate::memory::PositiveStrategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub memory: MemoryConfig,
    pub loss: LossConfig,
    pub synthesis: SynthesisConfig,
    pub clustering: ClusteringConfig,
    pub training: TrainingConfig,
    pub corruption: CorruptionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data: DataConfig::default(),
            encoder: EncoderConfig::default(),
            memory: MemoryConfig::default(),
            loss: LossConfig::default(),
            synthesis: SynthesisConfig::default(),
            clustering: ClusteringConfig::default(),
            training: TrainingConfig::default(),
            corruption: CorruptionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub input_dim: usize,
    /// Flat-text dataset to load instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub import: Option<PathBuf>,
    pub source: DomainSpec,
    pub target: DomainSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input_dim: 16,
            import: None,
            source: DomainSpec::default(),
            target: DomainSpec {
                samples_per_identity: 40,
                eval_samples_per_identity: 20,
                shift_offset: 1.0,
                distortion: 0.5,
                ..DomainSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: vec![64, 64],
            output_dim: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Multi,
    /// One centroid per class (K = 1 in the bank, moderate positive).
    Uni,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    /// Centroids per class, and queries per class in a batch.
    pub k: usize,
    pub momentum: f64,
    pub representation: Representation,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            k: 4,
            momentum: 0.2,
            representation: Representation::Multi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { eps: 0.5, min_pts: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Classes per domain in a batch (P).
    pub classes_per_batch: usize,
    pub epochs: usize,
    /// 0 means one pass over the clustered target samples: ⌈N_t / (P K)⌉.
    pub iterations_per_epoch: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub adam: AdamConfig,
    /// Std of the Gaussian jitter added to raw inputs of batch queries.
    pub augment_sigma: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let lr = LrSchedule::default();
        TrainingConfig {
            classes_per_batch: 4,
            epochs: 50,
            iterations_per_epoch: 0,
            base_lr: lr.base_lr,
            lr_decay: lr.decay,
            lr_step_epochs: lr.step_epochs,
            adam: AdamConfig::default(),
            augment_sigma: 0.05,
        }
    }
}

impl TrainingConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            decay: self.lr_decay,
            step_epochs: self.lr_step_epochs,
        }
    }
}

/// Label noise injected after clustering (target) or onto the ground truth
/// (source), redrawn every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    pub target_merge_pairs: usize,
    pub target_split_classes: usize,
    pub source_merge_pairs: usize,
    pub source_split_classes: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// First eight bytes (little-endian) of the SHA-256 of the canonical TOML.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Centroids per class actually stored in the bank.
    pub fn bank_k(&self) -> usize {
        match self.memory.representation {
            Representation::Multi => self.memory.k,
            Representation::Uni => 1,
        }
    }

    /// Loss settings with the uni-centroid override applied.
    pub fn effective_loss(&self) -> LossConfig {
        let mut loss = self.loss;
        if self.memory.representation == Representation::Uni {
            loss.positive = PositiveStrategy::Moderate;
        }
        loss
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.data.input_dim];
        sizes.extend_from_slice(&self.encoder.hidden);
        sizes.push(self.encoder.output_dim);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.data.input_dim == 0 || self.encoder.output_dim == 0 || self.encoder.hidden.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        self.data.source.validate()?;
        self.data.target.validate()?;
        self.synthesis.validate()?;
        if self.memory.k == 0 {
            return bad("memory.k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.memory.momentum) {
            return bad(format!("memory.momentum must lie in [0, 1], got {}", self.memory.momentum));
        }
        if !(self.loss.temperature > 0.0) {
            return bad(format!("loss.temperature must be positive, got {}", self.loss.temperature));
        }
        if !(self.clustering.eps > 0.0) || self.clustering.min_pts == 0 {
            return bad("clustering.eps must be > 0 and clustering.min_pts >= 1".into());
        }
        let t = &self.training;
        if t.classes_per_batch == 0 {
            return bad("training.classes_per_batch must be at least 1".into());
        }
        if !(t.base_lr >= 0.0) || !(t.lr_decay > 0.0) {
            return bad("training.base_lr must be >= 0 and training.lr_decay > 0".into());
        }
        if !(t.augment_sigma >= 0.0 && t.augment_sigma.is_finite()) {
            return bad("training.augment_sigma must be finite and >= 0".into());
        }
        let a = &t.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad("adam betas must lie in [0, 1), eps > 0, weight_decay >= 0".into());
        }
        Ok(())
    }
}
