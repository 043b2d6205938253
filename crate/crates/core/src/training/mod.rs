//! End-to-end training: run configuration, the Adam optimizer, the batched
//! surrogate-gradient loop, evaluation metrics, and binary checkpoints.
//!
//! A run is fully determined by its [`TrainConfig`] — batch shuffles are
//! stateless per epoch, so interrupting and resuming from a checkpoint
//! reproduces the uninterrupted run bit for bit.

mod adam;
mod checkpoint;
mod metrics;
mod runner;

pub use adam::{adam_step, Adam};
pub use checkpoint::{
    config_digest, load_checkpoint, restore_into, save_checkpoint, snapshot, Checkpoint,
    CKPT_MAGIC, CKPT_VERSION,
};
pub use metrics::{evaluate, metrics_from_confusion, metrics_text, EvalMetrics};
pub use runner::{
    history_csv, load_encoded_split, train, EncodedSample, EpochRecord, TrainOptions, TrainedRun,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csi::CsiError;
use crate::engine::EngineError;
use crate::layers::{ModelConfig, ModelError};
use crate::objective::{LossConfig, LossError};
use crate::telemetry::TelemetryError;

#[derive(Debug, Error)]
pub enum TrainError {
    /// Dataset problems: missing splits, inconsistent shapes, bad labels.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite losses or gradients.
    #[error("numerics error: {0}")]
    Numerics(String),
    /// Invalid or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or mismatched checkpoint files.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<CsiError> for TrainError {
    fn from(e: CsiError) -> Self {
        TrainError::Data(e.to_string())
    }
}

impl From<EngineError> for TrainError {
    fn from(e: EngineError) -> Self {
        TrainError::Data(e.to_string())
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Shape(m) => TrainError::Data(m),
            ModelError::Config(m) | ModelError::State(m) => TrainError::Config(m),
        }
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Shape(m) => TrainError::Config(m),
            LossError::InvalidEmbedding(m) => TrainError::Numerics(m),
        }
    }
}

impl From<TelemetryError> for TrainError {
    fn from(e: TelemetryError) -> Self {
        TrainError::Config(e.to_string())
    }
}

fn default_seed() -> u64 {
    7
}
fn default_epochs() -> usize {
    30
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Path to a dataset manifest (`manifest.json`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

/// A complete training recipe. Everything a run does is a function of this
/// struct; two runs with equal configs produce identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
                return Err(TrainError::Config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(TrainError::Config(format!(
                "epsilon must be a positive finite number, got {}",
                self.epsilon
            )));
        }
        if self.model.time_steps == 0 {
            return Err(TrainError::Config("model.time_steps must be ≥ 1".into()));
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}
