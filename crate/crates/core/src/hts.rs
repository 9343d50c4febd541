//! Hazard records and the scalar hazard time series derived from them.
//!
//! A record carries a `p x d_emb` token embedding matrix. Squeezing it row by
//! row gives the hazard time series (HTS); the averaged accumulation of that
//! series feeds the grey model, and the sign-change count of the raw series
//! fixes the forcing frequency.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the grey-guidance vector at the pipeline order `N = 3`.
pub const GUIDANCE_WIDTH: usize = 9;

#[derive(Debug, Error)]
pub enum HtsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("guidance has {got} values, expected {expected}")]
    GuidanceWidth { expected: usize, got: usize },
}

/// The three grading axes of a hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theme {
    Severity,
    Possibility,
    Risk,
}

impl Theme {
    pub const ALL: [Theme; 3] = [Theme::Severity, Theme::Possibility, Theme::Risk];

    /// Number of levels on this axis.
    pub fn classes(self) -> usize {
        match self {
            Theme::Severity | Theme::Possibility => 5,
            Theme::Risk => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Theme::Severity => "severity",
            Theme::Possibility => "possibility",
            Theme::Risk => "risk",
        }
    }
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Theme {
    type Err = HtsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "severity" => Ok(Theme::Severity),
            "possibility" => Ok(Theme::Possibility),
            "risk" => Ok(Theme::Risk),
            other => Err(HtsError::Invalid(format!("unknown theme '{other}'"))),
        }
    }
}

/// 1-based levels for each theme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub severity: u8,
    pub possibility: u8,
    pub risk: u8,
}

impl Labels {
    pub fn level(&self, theme: Theme) -> u8 {
        match theme {
            Theme::Severity => self.severity,
            Theme::Possibility => self.possibility,
            Theme::Risk => self.risk,
        }
    }

    fn validate(&self) -> Result<(), String> {
        for theme in Theme::ALL {
            let level = self.level(theme) as usize;
            if level == 0 || level > theme.classes() {
                return Err(format!(
                    "{theme} level {level} outside 1..={}",
                    theme.classes()
                ));
            }
        }
        Ok(())
    }
}

/// One hazard: its token embeddings and three theme labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub embedding: Vec<Vec<f64>>,
    pub labels: Labels,
}

impl HazardRecord {
    /// Number of tokens (embedding rows).
    pub fn len(&self) -> usize {
        self.embedding.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embedding.is_empty()
    }

    /// Embedding width.
    pub fn dim(&self) -> usize {
        self.embedding.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embedding.is_empty() {
            return Err("embedding has no rows".into());
        }
        let width = self.dim();
        if width == 0 {
            return Err("embedding rows are empty".into());
        }
        if let Some((i, row)) = self
            .embedding
            .iter()
            .enumerate()
            .find(|(_, row)| row.len() != width)
        {
            return Err(format!(
                "embedding row {i} has width {}, expected {width}",
                row.len()
            ));
        }
        if self.embedding.iter().flatten().any(|v| !v.is_finite()) {
            return Err("embedding contains a non-finite value".into());
        }
        self.labels.validate()
    }
}

/// Reads an NDJSON file of hazard records. Any malformed line rejects the
/// whole file; blank lines are ignored.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<HazardRecord>, HtsError> {
    let path = path.as_ref();
    let io_err = |source| HtsError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, idx + 1)?);
    }
    Ok(records)
}

fn parse_record(line: &str, line_no: usize) -> Result<HazardRecord, HtsError> {
    let record: HazardRecord = serde_json::from_str(line).map_err(|e| HtsError::Schema {
        line: line_no,
        message: e.to_string(),
    })?;
    record.validate().map_err(|message| HtsError::Schema {
        line: line_no,
        message,
    })?;
    Ok(record)
}

/// Writes records as NDJSON, one object per line.
pub fn write_records<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a HazardRecord>,
) -> Result<(), HtsError> {
    let path = path.as_ref();
    let io_err = |source| HtsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization is infallible");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Scalar hazard time series `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hts {
    values: Vec<f64>,
}

impl Hts {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<f64>> for Hts {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Averaged first-order accumulation `x1` of an HTS, length `n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeSeries {
    values: Vec<f64>,
}

impl CumulativeSeries {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sign-change count and the forcing frequency derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodEstimate {
    pub crossings: usize,
    pub omega: f64,
}

/// Mean of each embedding row.
pub fn squeeze(embedding: &[Vec<f64>]) -> Result<Hts, HtsError> {
    if embedding.is_empty() || embedding.iter().any(Vec::is_empty) {
        return Err(HtsError::Invalid("embedding must be non-empty".into()));
    }
    let values = embedding
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    Ok(Hts::new(values))
}

/// `x1[t] = (sum_{k<=t} x0[k] + sum_{k<=t} x0[k+1]) / 2` for `t = 1..n-1`.
pub fn accumulate(hts: &Hts) -> Result<CumulativeSeries, HtsError> {
    let x = hts.values();
    if x.len() < 2 {
        return Err(HtsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let mut acc = 0.0;
    let mut acc_next = 0.0;
    let values = x
        .windows(2)
        .map(|w| {
            acc += w[0];
            acc_next += w[1];
            (acc + acc_next) / 2.0
        })
        .collect();
    Ok(CumulativeSeries { values })
}

/// Counts strict sign changes between neighbours. With no crossing the
/// whole window is taken as one period.
pub fn estimate_period(hts: &Hts) -> Result<PeriodEstimate, HtsError> {
    let x = hts.values();
    if x.len() < 2 {
        return Err(HtsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let period = if crossings == 0 { x.len() } else { crossings };
    Ok(PeriodEstimate {
        crossings,
        omega: 2.0 * PI / period as f64,
    })
}

/// Appends `extra` to every embedding row.
pub fn concat_features(embedding: &[Vec<f64>], extra: &[f64]) -> Vec<Vec<f64>> {
    embedding
        .iter()
        .map(|row| {
            let mut out = Vec::with_capacity(row.len() + extra.len());
            out.extend_from_slice(row);
            out.extend_from_slice(extra);
            out
        })
        .collect()
}

/// Broadcasts the 9-value guidance vector onto every token row.
pub fn concat_guidance(record: &HazardRecord, gg: &[f64]) -> Result<Vec<Vec<f64>>, HtsError> {
    if gg.len() != GUIDANCE_WIDTH {
        return Err(HtsError::GuidanceWidth {
            expected: GUIDANCE_WIDTH,
            got: gg.len(),
        });
    }
    Ok(concat_features(&record.embedding, gg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(embedding: Vec<Vec<f64>>) -> HazardRecord {
        HazardRecord {
            id: "h".into(),
            tokens: vec!["t".into(); embedding.len()],
            embedding,
            labels: Labels {
                severity: 1,
                possibility: 2,
                risk: 3,
            },
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn squeeze_examples() {
        assert_eq!(squeeze(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap().values(), &[2.5]);
        assert_eq!(
            squeeze(&[vec![7.0], vec![-1.0], vec![0.0]]).unwrap().values(),
            &[7.0, -1.0, 0.0]
        );
        assert_eq!(
            squeeze(&[vec![1.0, -1.0], vec![2.0, 4.0]]).unwrap().values(),
            &[0.0, 3.0]
        );
        assert!(squeeze(&[]).is_err());
    }

    #[test]
    fn accumulate_examples() {
        let acc = |v: Vec<f64>| accumulate(&Hts::new(v)).unwrap().values().to_vec();
        assert_eq!(acc(vec![2.0; 4]), vec![2.0, 4.0, 6.0]);
        assert_eq!(acc(vec![1.0, 3.0]), vec![2.0]);
        assert_eq!(acc(vec![1.0, 2.0, 4.0]), vec![1.5, 4.5]);
        assert!(matches!(
            accumulate(&Hts::new(vec![1.0])),
            Err(HtsError::TooShort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn period_examples() {
        let est = |v: Vec<f64>| estimate_period(&Hts::new(v)).unwrap();
        let e = est(vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(e.crossings, 3);
        assert!((e.omega - 2.0 * PI / 3.0).abs() < 1e-15);

        let e = est(vec![0.5, 0.2, 0.9]);
        assert_eq!(e.crossings, 0);
        assert!((e.omega - 2.0 * PI / 3.0).abs() < 1e-15);

        let e = est(vec![2.0, -3.0, -1.0, 4.0, 0.0, 5.0]);
        assert_eq!(e.crossings, 2);
        assert!((e.omega - PI).abs() < 1e-15);
    }

    #[test]
    fn concat_examples() {
        let rec = record(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let out = concat_guidance(&rec, &[0.0; 9]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].len(), 11);
        assert_eq!(&out[0][..2], &[1.0, 2.0]);
        assert_eq!(&out[1][..2], &[3.0, 4.0]);
        assert!(out.iter().all(|r| r[2..].iter().all(|&v| v == 0.0)));

        let wide = record(vec![vec![0.25; 768]]);
        let out = concat_guidance(&wide, &[1.0; 9]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 777);
        assert_eq!(&out[0][..768], wide.embedding[0].as_slice());

        assert!(matches!(
            concat_guidance(&rec, &[0.0; 8]),
            Err(HtsError::GuidanceWidth { expected: 9, got: 8 })
        ));
    }

    #[test]
    fn load_empty_file() {
        let file = write_lines(&[]);
        assert!(load_records(file.path()).unwrap().is_empty());
    }

    #[test]
    fn load_rejects_ragged_rows_with_line_number() {
        let good = serde_json::to_string(&record(vec![vec![1.0, 2.0]])).unwrap();
        let bad = r#"{"id":"x","tokens":["a","b"],"embedding":[[1.0,2.0],[3.0]],"labels":{"severity":1,"possibility":1,"risk":1}}"#;
        let file = write_lines(&[good, bad.to_string()]);
        match load_records(file.path()) {
            Err(HtsError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("width"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_label_out_of_range_and_missing_fields() {
        let risk5 = r#"{"id":"x","tokens":["a"],"embedding":[[1.0]],"labels":{"severity":1,"possibility":1,"risk":5}}"#;
        let file = write_lines(&[risk5.into()]);
        assert!(matches!(
            load_records(file.path()),
            Err(HtsError::Schema { line: 1, .. })
        ));
        let missing = r#"{"id":"x","tokens":["a"],"labels":{"severity":1,"possibility":1,"risk":1}}"#;
        let file = write_lines(&[missing.into()]);
        assert!(matches!(
            load_records(file.path()),
            Err(HtsError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn load_preserves_order_and_level_histogram() {
        // Possibility column of the reference corpus.
        let counts = [419usize, 1760, 1607, 1134, 949];
        let mut records = Vec::new();
        for (level, &count) in counts.iter().enumerate() {
            for i in 0..count {
                let mut rec = record(vec![vec![i as f64, 1.0]]);
                rec.id = format!("{level}-{i}");
                rec.labels.possibility = level as u8 + 1;
                records.push(rec);
            }
        }
        let file = tempfile::NamedTempFile::new().unwrap();
        write_records(file.path(), &records).unwrap();
        let loaded = load_records(file.path()).unwrap();
        assert_eq!(loaded, records);
        let mut hist = [0usize; 5];
        for rec in &loaded {
            hist[rec.labels.possibility as usize - 1] += 1;
        }
        assert_eq!(hist, counts);
        assert_eq!(loaded.len(), 5869);
    }

    proptest! {
        #[test]
        fn accumulate_difference_identity(x in prop::collection::vec(-100.0f64..100.0, 3..60)) {
            let x1 = accumulate(&Hts::new(x.clone())).unwrap();
            let v = x1.values();
            prop_assert_eq!(v.len(), x.len() - 1);
            for t in 1..v.len() {
                let diff = v[t] - v[t - 1];
                let expected = (x[t] + x[t + 1]) / 2.0;
                prop_assert!((diff - expected).abs() <= 1e-12 * (1.0 + v[t].abs()));
            }
        }

        #[test]
        fn squeeze_is_linear(
            rows in 1usize..6, cols in 1usize..6,
            seed in prop::collection::vec(-10.0f64..10.0, 72),
            alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        ) {
            let e: Vec<Vec<f64>> = (0..rows).map(|i| seed[i * cols..(i + 1) * cols].to_vec()).collect();
            let f: Vec<Vec<f64>> = (0..rows).map(|i| seed[36 + i * cols..36 + (i + 1) * cols].to_vec()).collect();
            let mix: Vec<Vec<f64>> = e.iter().zip(&f)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect())
                .collect();
            let lhs = squeeze(&mix).unwrap();
            let se = squeeze(&e).unwrap();
            let sf = squeeze(&f).unwrap();
            for i in 0..rows {
                let rhs = alpha * se.values()[i] + beta * sf.values()[i];
                prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn period_is_positive_scale_invariant(
            x in prop::collection::vec(-5.0f64..5.0, 2..40),
            alpha in 1e-3f64..1e3,
        ) {
            let a = estimate_period(&Hts::new(x.clone())).unwrap();
            let b = estimate_period(&Hts::new(x.iter().map(|v| v * alpha).collect())).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn concat_preserves_original_columns(
            rows in 1usize..5, cols in 1usize..5,
            data in prop::collection::vec(-1e6f64..1e6, 25),
            gg in prop::collection::vec(-1e3f64..1e3, 9),
        ) {
            let emb: Vec<Vec<f64>> = (0..rows).map(|i| data[i * cols..(i + 1) * cols].to_vec()).collect();
            let out = concat_guidance(&record(emb.clone()), &gg).unwrap();
            for (row, orig) in out.iter().zip(&emb) {
                prop_assert_eq!(&row[..cols], orig.as_slice());
                prop_assert_eq!(&row[cols..], gg.as_slice());
            }
        }
    }
}
