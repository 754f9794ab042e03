//! Versioned JSON container for trained models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::AnyModel;
use crate::datasets::{NormPolicy, SidecarEntry};
use crate::error::{Error, Result};
use crate::model::{EpisodicModel, ModelKind};
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "fewshot-gp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Normalization the model was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    /// Policy applied to the training tasks.
    pub training_policy: NormPolicy,
    /// Per-task records of the training collection.
    pub records: SidecarEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_kind: ModelKind,
    /// Location-vector width.
    pub input_dim: usize,
    /// Task-representation width, for models that have one.
    pub latent_dim: Option<usize>,
    pub config: TrainConfig,
    pub best_episode: usize,
    pub best_val_loss: f64,
    pub normalization: NormalizationMeta,
    pub model: AnyModel<f64>,
}

impl Checkpoint {
    pub fn new(model: AnyModel<f64>, config: TrainConfig, best_episode: usize, best_val_loss: f64, normalization: NormalizationMeta) -> Self {
        let latent_dim = match &model {
            AnyModel::Gp(m) => Some(m.config().latent_dim),
            AnyModel::Np(_) => Some(config.architecture.latent_dim),
            _ => None,
        };
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model_kind: model.kind(),
            input_dim: model.input_dim(),
            latent_dim,
            config,
            best_episode,
            best_val_loss,
            normalization,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and checks the format tag, version and declared kind.
    pub fn from_json(text: &str) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text)?;
        let format = header.get("format").and_then(|v| v.as_str()).unwrap_or_default();
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag {format:?}")));
        }
        let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let ck: Self = serde_json::from_value(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.model.kind() != ck.model_kind || ck.model.input_dim() != ck.input_dim {
            return Err(Error::Checkpoint("header does not match the stored model".into()));
        }
        if ck.model.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Checkpoint("stored parameters are not finite".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
