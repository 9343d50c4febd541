use super::{GuidanceEntry, GuidanceTransform, PipelineError};
use crate::hffnn::Sample;
use crate::hts::{concat_features, HazardRecord, Theme};
use crate::nn::Tensor;

/// 0-based class index of a record's level for `theme`.
pub fn label_index(record: &HazardRecord, theme: Theme) -> Result<usize, PipelineError> {
    let level = record.labels.level(theme) as usize;
    if level == 0 || level > theme.classes() {
        return Err(PipelineError::Invalid(format!(
            "record '{}': {theme} level {level} outside 1..={}",
            record.id,
            theme.classes()
        )));
    }
    Ok(level - 1)
}

/// Network inputs for `theme`. With guidance, every token row is extended
/// by the transformed guidance of its record; `guidance` must follow the
/// order of `records`.
pub fn build_samples(
    records: &[HazardRecord],
    theme: Theme,
    guidance: Option<&[GuidanceEntry]>,
    transform: GuidanceTransform,
) -> Result<Vec<Sample>, PipelineError> {
    if let Some(g) = guidance {
        if g.len() != records.len() {
            return Err(PipelineError::Cache(format!(
                "{} guidance entries for {} records",
                g.len(),
                records.len()
            )));
        }
    }
    records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            record.validate().map_err(|m| PipelineError::Invalid(format!("record '{}': {m}", record.id)))?;
            let rows = match guidance {
                Some(g) => {
                    if g[i].id != record.id {
                        return Err(PipelineError::Cache(format!(
                            "entry {i} is for '{}', record is '{}'",
                            g[i].id, record.id
                        )));
                    }
                    let scaled: Vec<f64> = g[i].gg.iter().map(|&v| transform.apply(v)).collect();
                    concat_features(&record.embedding, &scaled)
                }
                None => record.embedding.clone(),
            };
            Ok(Sample {
                input: Tensor::from_rows(&rows).map_err(crate::hffnn::HffnnError::from)?,
                label: label_index(record, theme)?,
            })
        })
        .collect()
}
