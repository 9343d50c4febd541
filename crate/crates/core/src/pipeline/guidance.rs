use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::grey::{gm11_guidance, guidance_with_order, GreyError, GreyGuidance};
use crate::hts::{squeeze, HazardRecord};

/// Which grey model produces the guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceModel {
    /// Fourier-forced model of the requested order.
    Fsgm,
    /// Plain GM(1,1): `(eta, lambda, A0)` with the harmonic slots zeroed.
    Gm,
}

impl FromStr for GuidanceModel {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fsgm" => Ok(Self::Fsgm),
            "gm" => Ok(Self::Gm),
            other => Err(PipelineError::Unknown {
                kind: "guidance model",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for GuidanceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fsgm => "fsgm",
            Self::Gm => "gm",
        })
    }
}

/// Scaling applied to guidance values before they enter the network.
/// Fitted coefficients such as `eta` and `A0` span many orders of magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceTransform {
    /// `sign(v) * ln(1 + |v|)`.
    #[default]
    SignedLog,
    Identity,
}

impl GuidanceTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::SignedLog => v.signum() * v.abs().ln_1p(),
            Self::Identity => v,
        }
    }
}

impl FromStr for GuidanceTransform {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "signed_log" | "slog" => Ok(Self::SignedLog),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(PipelineError::Unknown {
                kind: "guidance transform",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for GuidanceTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SignedLog => "signed_log",
            Self::Identity => "identity",
        })
    }
}

/// One line of the guidance cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceEntry {
    pub id: String,
    pub gg: Vec<f64>,
    pub degenerate: bool,
}

/// Guidance for one record; any fitting failure is an error.
pub fn extract_guidance(
    record: &HazardRecord,
    model: GuidanceModel,
    order: usize,
) -> Result<GuidanceEntry, GreyError> {
    let x0 = squeeze(&record.embedding)?;
    let guidance = match model {
        GuidanceModel::Fsgm => guidance_with_order(&x0, order)?,
        GuidanceModel::Gm => gm11_guidance(&x0, order)?,
    };
    Ok(GuidanceEntry {
        id: record.id.clone(),
        gg: guidance.values,
        degenerate: guidance.degenerate,
    })
}

/// As [`extract_guidance`], but a failed fit yields all-zero guidance
/// flagged as degenerate.
pub fn guidance_or_fallback(record: &HazardRecord, model: GuidanceModel, order: usize) -> GuidanceEntry {
    extract_guidance(record, model, order).unwrap_or_else(|e| {
        log::warn!("record '{}': {model} fit failed ({e}); using zero guidance", record.id);
        GuidanceEntry {
            id: record.id.clone(),
            gg: GreyGuidance::zeros(order).values,
            degenerate: true,
        }
    })
}

pub fn extract_all(records: &[HazardRecord], model: GuidanceModel, order: usize) -> Vec<GuidanceEntry> {
    records
        .iter()
        .map(|r| guidance_or_fallback(r, model, order))
        .collect()
}

pub fn write_cache<'a>(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = &'a GuidanceEntry>,
) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| PipelineError::io(path, e))?);
    for entry in entries {
        writeln!(out, "{}", serde_json::to_string(entry)?).map_err(|e| PipelineError::io(path, e))?;
    }
    out.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<GuidanceEntry>, PipelineError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: GuidanceEntry = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Cache(format!("line {}: {e}", idx + 1)))?;
        if entry.gg.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::Cache(format!("line {}: non-finite guidance", idx + 1)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hts::Labels;

    fn record(id: &str, series: &[f64]) -> HazardRecord {
        HazardRecord {
            id: id.into(),
            tokens: vec!["w".into(); series.len()],
            embedding: series.iter().map(|&v| vec![v - 1.0, v + 1.0]).collect(),
            labels: Labels {
                severity: 1,
                possibility: 1,
                risk: 1,
            },
        }
    }

    fn wave(n: usize) -> Vec<f64> {
        (1..=n)
            .map(|t| 0.5 * (0.04 * t as f64).exp() + (2.1 * t as f64).sin())
            .collect()
    }

    #[test]
    fn fsgm_and_gm_layouts() {
        let r = record("a", &wave(20));
        let fsgm = extract_guidance(&r, GuidanceModel::Fsgm, 3).unwrap();
        assert_eq!(fsgm.gg.len(), 9);
        let gm = extract_guidance(&r, GuidanceModel::Gm, 3).unwrap();
        assert_eq!(gm.gg.len(), 9);
        assert!(gm.gg[3..].iter().all(|&v| v == 0.0));
        let series: Vec<f64> = (1..=40).map(|t| (2.1 * t as f64).sin() + 0.1).collect();
        let long = record("b", &series);
        assert_eq!(extract_guidance(&long, GuidanceModel::Fsgm, 5).unwrap().gg.len(), 13);
    }

    #[test]
    fn short_series_fall_back_to_zero_guidance() {
        let r = record("short", &wave(6));
        assert!(matches!(
            extract_guidance(&r, GuidanceModel::Fsgm, 3),
            Err(GreyError::TooShort { .. })
        ));
        let entry = guidance_or_fallback(&r, GuidanceModel::Fsgm, 3);
        assert!(entry.degenerate);
        assert_eq!(entry.gg, vec![0.0; 9]);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gg.ndjson");
        let entries = extract_all(&[record("a", &wave(20)), record("b", &wave(4))], GuidanceModel::Fsgm, 3);
        write_cache(&path, &entries).unwrap();
        assert_eq!(read_cache(&path).unwrap(), entries);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"id\":\"a\",\"gg\":["));

        std::fs::write(&path, "{\"id\":\"a\",\"gg\":[1.0]}\n").unwrap();
        assert!(matches!(read_cache(&path), Err(PipelineError::Cache(_))));
    }

    #[test]
    fn signed_log_is_odd_and_monotone() {
        let t = GuidanceTransform::SignedLog;
        assert_eq!(t.apply(0.0), 0.0);
        assert_eq!(t.apply(-3.0), -t.apply(3.0));
        assert!(t.apply(1e6) < 14.0);
        assert_eq!(GuidanceTransform::Identity.apply(-2.5), -2.5);
    }
}
