//! End-to-end orchestration: splitting, guidance extraction and caching,
//! the four ablation variants, the order sweep and the synthetic corpus.

mod config;
mod dataset;
mod guidance;
mod split;
mod sweep;
mod synth;
mod variants;

use thiserror::Error;

use crate::grey::GreyError;
use crate::hffnn::HffnnError;
use crate::hts::HtsError;
use crate::metrics::MetricsError;

pub use config::{load_config, parse_config, RunConfig};
pub use dataset::{build_samples, label_index};
pub use guidance::{
    extract_all, extract_guidance, guidance_or_fallback, read_cache, write_cache, GuidanceEntry,
    GuidanceModel, GuidanceTransform,
};
pub use split::{split_dataset, subset, SplitSpec};
pub use sweep::{sweep_order, SweepReport, SweepRow};
pub use synth::{linear_probe, synth_generate, GeneratingParams, SynthOutput, SynthSpec};
pub use variants::{
    evaluate_checkpoint, run_variant, train_variant, AggregateMean, RepeatResult, RunReport,
    Variant,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Hts(#[from] HtsError),
    #[error(transparent)]
    Grey(#[from] GreyError),
    #[error(transparent)]
    Hffnn(#[from] HffnnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("unknown {kind} '{value}'")]
    Unknown { kind: &'static str, value: String },
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("record '{id}' has {got} tokens, order {order} needs {needed}")]
    RecordTooShort {
        id: String,
        order: usize,
        needed: usize,
        got: usize,
    },
    #[error("guidance cache: {0}")]
    Cache(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
