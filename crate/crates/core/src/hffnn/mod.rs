//! Hierarchical feature-fusion classifier: sentence-level attention pooling,
//! multi-window convolutions, gated fusion stacked three deep, and a softmax
//! head, together with the training loop and checkpoint format.

mod layers;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsError;
use crate::nn::{Activation, NnError};

pub use layers::{
    classify, game_forward, head_logits, llfe_forward, sdm_forward, slfe_forward, ConvParams,
    FilterGate, GameOutput, GameWeights, LayerSettings, StageWeights,
};
pub use model::{forward, init_params, validate_params, Architecture, Bound, STAGES};
pub use train::{
    evaluate, predict, predict_proba, train, train_until, EpochReport, ModelCheckpoint, Sample,
    InputScaling, TrainingMetadata, CHECKPOINT_VERSION,
};

/// Window lengths of the local encoder.
pub const DEFAULT_KERNEL_SIZES: [usize; 5] = [2, 3, 4, 5, 6];

#[derive(Debug, Error)]
pub enum HffnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("input width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown checkpoint version '{0}'")]
    UnknownVersion(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HffnnConfig {
    /// Input feature width: embedding width plus guidance width.
    pub d_in: usize,
    pub d_model: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters_per_kernel: usize,
    pub noise_std: f64,
    pub tau_filter: f64,
    pub tau_out: f64,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub repeats: usize,
    /// Standardise every input column with training-set statistics.
    #[serde(default = "enabled")]
    pub standardize_inputs: bool,
}

fn enabled() -> bool {
    true
}

impl Default for HffnnConfig {
    fn default() -> Self {
        Self {
            d_in: 768 + crate::hts::GUIDANCE_WIDTH,
            d_model: 32,
            kernel_sizes: DEFAULT_KERNEL_SIZES.to_vec(),
            filters_per_kernel: 4,
            noise_std: 0.1,
            tau_filter: 0.1,
            tau_out: 0.5,
            activation: Activation::Tanh,
            lr: 1e-5,
            epochs: 50,
            batch_size: 128,
            seed: 0,
            repeats: 5,
            standardize_inputs: true,
        }
    }
}

impl HffnnConfig {
    pub fn validate(&self) -> Result<(), HffnnError> {
        let fail = |msg: &str| Err(HffnnError::Config(msg.to_string()));
        if self.d_in == 0 || self.d_model == 0 {
            return fail("d_in and d_model must be positive");
        }
        if self.filters_per_kernel == 0 {
            return fail("filters_per_kernel must be at least 1");
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return fail("kernel_sizes must be non-empty and positive");
        }
        let mut sorted = self.kernel_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernel_sizes.len() {
            return fail("kernel_sizes must be distinct");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std must be finite and non-negative");
        }
        if !(self.tau_filter.is_finite() && self.tau_out.is_finite()) {
            return fail("tau_filter and tau_out must be finite");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        Ok(())
    }

    pub(crate) fn layer_settings(&self) -> LayerSettings {
        LayerSettings {
            noise_std: self.noise_std,
            tau_filter: self.tau_filter,
            tau_out: self.tau_out,
            activation: self.activation,
        }
    }
}
