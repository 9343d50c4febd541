use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_samples, extract_all, subset, GuidanceModel, PipelineError, RunConfig, SplitSpec};
use crate::grey::{min_length, GreyGuidance};
use crate::hffnn::{evaluate, train, Architecture, HffnnConfig};
use crate::hts::{HazardRecord, Theme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub order: usize,
    pub guidance_width: usize,
    /// Macro-F1 averaged over repeats.
    pub test_f1: f64,
    pub validation_f1: f64,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub theme: Theme,
    pub split_seed: u64,
    pub classifier: Architecture,
    pub rows: Vec<SweepRow>,
    pub config: RunConfig,
}

/// Refits guidance at every order in `orders` and retrains a softmax head
/// on the token-mean of the guidance-augmented input.
pub fn sweep_order(
    records: &[HazardRecord],
    theme: Theme,
    split: &SplitSpec,
    orders: RangeInclusive<usize>,
    config: &RunConfig,
) -> Result<SweepReport, PipelineError> {
    config.model.validate()?;
    if orders.is_empty() {
        return Err(PipelineError::Invalid(format!("empty order range {orders:?}")));
    }
    let max_order = *orders.end();
    let needed = min_length(max_order);
    if let Some(r) = records.iter().find(|r| r.len() < needed) {
        return Err(PipelineError::RecordTooShort {
            id: r.id.clone(),
            order: max_order,
            needed,
            got: r.len(),
        });
    }
    let d_emb = records.first().map_or(0, HazardRecord::dim);
    let classifier = Architecture::FcHead;
    let mut rows = Vec::new();
    for order in orders {
        let guidance = extract_all(records, GuidanceModel::Fsgm, order);
        let width = GreyGuidance::width(order);
        debug_assert!(guidance.iter().all(|g| g.gg.len() == width));
        let samples = build_samples(records, theme, Some(&guidance), config.guidance_transform)?;
        let (train_set, test_set, validation_set) = (
            subset(&samples, &split.train),
            subset(&samples, &split.test),
            subset(&samples, &split.validation),
        );
        let scores = (0..config.model.repeats)
            .into_par_iter()
            .map(|i| {
                let model = HffnnConfig {
                    d_in: d_emb + width,
                    seed: config.model.seed.wrapping_add(i as u64),
                    ..config.model.clone()
                };
                let ckpt = train(classifier, &train_set, theme.classes(), &model)?;
                Ok((
                    evaluate(&ckpt, &test_set)?.macro_avg.f1,
                    evaluate(&ckpt, &validation_set)?.macro_avg.f1,
                ))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let test_f1: f64 = scores.iter().map(|s| s.0).sum();
        let validation_f1: f64 = scores.iter().map(|s| s.1).sum();
        let repeats = config.model.repeats as f64;
        let row = SweepRow {
            order,
            guidance_width: width,
            test_f1: test_f1 / repeats,
            validation_f1: validation_f1 / repeats,
            degenerate: guidance.iter().filter(|g| g.degenerate).count(),
        };
        log::info!(
            "order {order}: test F1 {:.4}, validation F1 {:.4}",
            row.test_f1,
            row.validation_f1
        );
        rows.push(row);
    }
    Ok(SweepReport {
        theme,
        split_seed: split.seed,
        classifier,
        rows,
        config: config.clone(),
    })
}
