use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_samples, guidance_or_fallback, subset, GuidanceEntry, GuidanceModel, GuidanceTransform,
    PipelineError, RunConfig, SplitSpec,
};
use crate::grey::{GreyGuidance, PIPELINE_ORDER};
use crate::hffnn::{evaluate, train, Architecture, ModelCheckpoint, Sample};
use crate::hts::{HazardRecord, Theme};
use crate::metrics::Metrics;

/// The four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Full network without guidance columns.
    Dlgm1,
    /// Full network with GM(1,1) guidance.
    Dlgm2,
    /// Fourier-forced guidance, token-mean input straight into the softmax head.
    Dlgm3,
    /// Fourier-forced guidance with the full network.
    Dlgm4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Self::Dlgm1, Self::Dlgm2, Self::Dlgm3, Self::Dlgm4];

    pub fn guidance_model(self) -> Option<GuidanceModel> {
        match self {
            Self::Dlgm1 => None,
            Self::Dlgm2 => Some(GuidanceModel::Gm),
            Self::Dlgm3 | Self::Dlgm4 => Some(GuidanceModel::Fsgm),
        }
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Self::Dlgm3 => Architecture::FcHead,
            _ => Architecture::Hffnn,
        }
    }
}

impl FromStr for Variant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dlgm1" => Ok(Self::Dlgm1),
            "dlgm2" => Ok(Self::Dlgm2),
            "dlgm3" => Ok(Self::Dlgm3),
            "dlgm4" => Ok(Self::Dlgm4),
            other => Err(PipelineError::Unknown {
                kind: "variant",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dlgm1 => "dlgm1",
            Self::Dlgm2 => "dlgm2",
            Self::Dlgm3 => "dlgm3",
            Self::Dlgm4 => "dlgm4",
        })
    }
}

/// One training run of a variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub test: Metrics,
    pub validation: Metrics,
}

/// Aggregate scores averaged over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateMean {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

impl AggregateMean {
    pub fn of<'a>(metrics: impl IntoIterator<Item = &'a Metrics>) -> Self {
        let mut mean = Self::default();
        let mut count = 0usize;
        for m in metrics {
            mean.macro_precision += m.macro_avg.precision;
            mean.macro_recall += m.macro_avg.recall;
            mean.macro_f1 += m.macro_avg.f1;
            mean.weighted_precision += m.weighted.precision;
            mean.weighted_recall += m.weighted.recall;
            mean.weighted_f1 += m.weighted.f1;
            mean.accuracy += m.accuracy;
            count += 1;
        }
        if count > 0 {
            let n = count as f64;
            for v in [
                &mut mean.macro_precision,
                &mut mean.macro_recall,
                &mut mean.macro_f1,
                &mut mean.weighted_precision,
                &mut mean.weighted_recall,
                &mut mean.weighted_f1,
                &mut mean.accuracy,
            ] {
                *v /= n;
            }
        }
        mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub theme: Theme,
    pub split_seed: u64,
    /// Records whose guidance fit failed or had a vanishing growth rate.
    pub degenerate_guidance: usize,
    pub repeats: Vec<RepeatResult>,
    pub mean_test: AggregateMean,
    pub mean_validation: AggregateMean,
    pub config: RunConfig,
}

/// Guidance for every record, from `cache` where it has the id and fitted
/// otherwise.
fn resolve_guidance(
    records: &[HazardRecord],
    model: GuidanceModel,
    cache: Option<&[GuidanceEntry]>,
) -> Result<Vec<GuidanceEntry>, PipelineError> {
    let width = GreyGuidance::width(PIPELINE_ORDER);
    let lookup: HashMap<&str, &GuidanceEntry> = cache
        .unwrap_or_default()
        .iter()
        .map(|e| (e.id.as_str(), e))
        .collect();
    records
        .iter()
        .map(|r| match lookup.get(r.id.as_str()) {
            Some(e) if e.gg.len() == width => Ok((*e).clone()),
            Some(e) => Err(PipelineError::Cache(format!(
                "entry '{}' has {} values, expected {width}",
                e.id,
                e.gg.len()
            ))),
            None => Ok(guidance_or_fallback(r, model, PIPELINE_ORDER)),
        })
        .collect()
}

fn feature_width(records: &[HazardRecord]) -> Result<usize, PipelineError> {
    let first = records.first().ok_or(PipelineError::TooFewRecords { needed: 1, got: 0 })?;
    let width = first.dim();
    if let Some(r) = records.iter().find(|r| r.dim() != width) {
        return Err(PipelineError::Invalid(format!(
            "record '{}' has embedding width {}, expected {width}",
            r.id,
            r.dim()
        )));
    }
    Ok(width)
}

/// Network inputs for `variant` plus the number of degenerate guidance fits.
fn variant_inputs(
    variant: Variant,
    theme: Theme,
    records: &[HazardRecord],
    transform: GuidanceTransform,
    cache: Option<&[GuidanceEntry]>,
) -> Result<(Vec<Sample>, usize), PipelineError> {
    match variant.guidance_model() {
        None => Ok((build_samples(records, theme, None, transform)?, 0)),
        Some(model) => {
            let guidance = resolve_guidance(records, model, cache)?;
            let degenerate = guidance.iter().filter(|g| g.degenerate).count();
            Ok((build_samples(records, theme, Some(&guidance), transform)?, degenerate))
        }
    }
}

fn model_config(variant: Variant, config: &RunConfig, d_emb: usize, seed: u64) -> crate::hffnn::HffnnConfig {
    let guidance = if variant.guidance_model().is_some() {
        GreyGuidance::width(PIPELINE_ORDER)
    } else {
        0
    };
    crate::hffnn::HffnnConfig {
        d_in: d_emb + guidance,
        seed,
        ..config.model.clone()
    }
}

fn tag(ckpt: &mut ModelCheckpoint, variant: Variant, theme: Theme, config: &RunConfig) {
    ckpt.tags.insert("variant".into(), variant.to_string());
    ckpt.tags.insert("theme".into(), theme.to_string());
    ckpt.tags.insert("guidance_transform".into(), config.guidance_transform.to_string());
}

/// Trains `variant` on the training part of `split` once per repeat, with
/// seeds `seed, seed + 1, ...`, and scores each run on the test and
/// validation parts.
pub fn run_variant(
    variant: Variant,
    theme: Theme,
    records: &[HazardRecord],
    split: &SplitSpec,
    config: &RunConfig,
    cache: Option<&[GuidanceEntry]>,
) -> Result<RunReport, PipelineError> {
    config.model.validate()?;
    let d_emb = feature_width(records)?;
    let (samples, degenerate) =
        variant_inputs(variant, theme, records, config.guidance_transform, cache)?;
    if degenerate > 0 {
        log::warn!("{variant}: {degenerate} of {} records have degenerate guidance", records.len());
    }
    let train_set = subset(&samples, &split.train);
    let test_set = subset(&samples, &split.test);
    let validation_set = subset(&samples, &split.validation);

    // Repeats are independent; collecting an indexed parallel iterator keeps seed order.
    let repeats = (0..config.model.repeats)
        .into_par_iter()
        .map(|i| {
            let seed = config.model.seed.wrapping_add(i as u64);
            let model = model_config(variant, config, d_emb, seed);
            let ckpt = train(variant.architecture(), &train_set, theme.classes(), &model)?;
            let result = RepeatResult {
                seed,
                epochs_run: ckpt.metadata.epochs_run,
                final_loss: ckpt.metadata.loss_history.last().copied().unwrap_or(f64::NAN),
                test: evaluate(&ckpt, &test_set)?,
                validation: evaluate(&ckpt, &validation_set)?,
            };
            log::info!(
                "{variant} {theme} seed {seed}: test macro-F1 {:.4}, validation macro-F1 {:.4}",
                result.test.macro_avg.f1,
                result.validation.macro_avg.f1
            );
            Ok(result)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(RunReport {
        variant,
        theme,
        split_seed: split.seed,
        degenerate_guidance: degenerate,
        mean_test: AggregateMean::of(repeats.iter().map(|r| &r.test)),
        mean_validation: AggregateMean::of(repeats.iter().map(|r| &r.validation)),
        repeats,
        config: config.clone(),
    })
}

/// Trains a single model of `variant` on all of `records` with the
/// configured seed. The checkpoint is tagged with what evaluation needs to
/// rebuild its inputs.
pub fn train_variant(
    variant: Variant,
    theme: Theme,
    records: &[HazardRecord],
    config: &RunConfig,
    cache: Option<&[GuidanceEntry]>,
) -> Result<ModelCheckpoint, PipelineError> {
    config.model.validate()?;
    let d_emb = feature_width(records)?;
    let (samples, _) = variant_inputs(variant, theme, records, config.guidance_transform, cache)?;
    let model = model_config(variant, config, d_emb, config.model.seed);
    let mut ckpt = train(variant.architecture(), &samples, theme.classes(), &model)?;
    tag(&mut ckpt, variant, theme, config);
    Ok(ckpt)
}

/// Scores a checkpoint written by [`train_variant`] on `records`.
pub fn evaluate_checkpoint(
    ckpt: &ModelCheckpoint,
    records: &[HazardRecord],
    theme: Theme,
    cache: Option<&[GuidanceEntry]>,
) -> Result<Metrics, PipelineError> {
    let tag = |key: &str| {
        ckpt.tags
            .get(key)
            .ok_or_else(|| PipelineError::Invalid(format!("checkpoint has no '{key}' tag")))
    };
    let variant: Variant = tag("variant")?.parse()?;
    let trained: Theme = tag("theme")?
        .parse()
        .map_err(|_| PipelineError::Invalid("checkpoint theme tag is not a theme".into()))?;
    if trained != theme {
        return Err(PipelineError::Invalid(format!(
            "checkpoint was trained for {trained}, not {theme}"
        )));
    }
    let transform: GuidanceTransform = tag("guidance_transform")?.parse()?;
    let (samples, _) = variant_inputs(variant, theme, records, transform, cache)?;
    Ok(evaluate(ckpt, &samples)?)
}
