use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::model::{forward, init_params, validate_params, Architecture, Bound};
use super::{HffnnConfig, HffnnError};
use crate::metrics::{compute_metrics, Metrics};
use crate::nn::{adam_step, AdamConfig, AdamState, Graph, ParamGrads, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: &str = "hffnn-ckpt-v1";

/// One network input with its 0-based class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `p x d_in`.
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    /// Mean cross-entropy over each epoch's samples.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
}

/// Per-column affine map `(x - mean) * scale` applied to every input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Columns whose spread is below this are only centred.
const MIN_SPREAD: f64 = 1e-12;

impl InputScaling {
    /// Column statistics over every token row of `samples`.
    pub fn fit(samples: &[Sample]) -> Self {
        let width = samples.first().map_or(0, |s| s.input.shape()[1]);
        let mut sum = vec![0.0; width];
        let mut rows = 0usize;
        for s in samples {
            for i in 0..s.input.shape()[0] {
                sum.iter_mut().zip(s.input.row(i)).for_each(|(a, v)| *a += v);
                rows += 1;
            }
        }
        let n = rows.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
        let mut sq = vec![0.0; width];
        for s in samples {
            for i in 0..s.input.shape()[0] {
                for ((a, v), m) in sq.iter_mut().zip(s.input.row(i)).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let scale = sq
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > MIN_SPREAD { 1.0 / sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, input: &Tensor) -> Tensor {
        let mut out = input.clone();
        let width = self.mean.len();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % width;
            *v = (*v - self.mean[j]) * self.scale[j];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: String,
    pub architecture: Architecture,
    pub classes: usize,
    pub config: HffnnConfig,
    pub seed: u64,
    /// Free-form labels set by the caller, such as the theme or variant.
    pub tags: BTreeMap<String, String>,
    pub params: ParamStore,
    /// Set when the model was trained on standardised inputs.
    #[serde(default)]
    pub input_scaling: Option<InputScaling>,
    pub metadata: TrainingMetadata,
}

impl ModelCheckpoint {
    /// Untrained model with freshly initialised parameters.
    pub fn init(
        architecture: Architecture,
        classes: usize,
        config: &HffnnConfig,
    ) -> Result<Self, HffnnError> {
        config.validate()?;
        if classes < 2 {
            return Err(HffnnError::Config(format!("{classes} classes, need at least 2")));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
        Ok(Self {
            version: CHECKPOINT_VERSION.to_string(),
            architecture,
            classes,
            config: config.clone(),
            seed: config.seed,
            tags: BTreeMap::new(),
            params: init_params(architecture, config, classes, &mut rng),
            input_scaling: None,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn to_json(&self) -> Result<String, HffnnError> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks the version tag and every parameter shape.
    pub fn from_json(text: &str) -> Result<Self, HffnnError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("version").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => return Err(HffnnError::UnknownVersion(other.to_string())),
            None => return Err(HffnnError::Checkpoint("missing version tag".into())),
        }
        let ckpt: Self = serde_json::from_value(raw)?;
        ckpt.config.validate()?;
        validate_params(ckpt.architecture, &ckpt.config, ckpt.classes, &ckpt.params)?;
        if let Some(scaling) = &ckpt.input_scaling {
            let d_in = ckpt.config.d_in;
            if scaling.mean.len() != d_in || scaling.scale.len() != d_in {
                return Err(HffnnError::Checkpoint(format!(
                    "input scaling has {} means and {} scales, expected {d_in}",
                    scaling.mean.len(),
                    scaling.scale.len()
                )));
            }
            if scaling.mean.iter().chain(&scaling.scale).any(|v| !v.is_finite()) {
                return Err(HffnnError::Checkpoint("non-finite input scaling".into()));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HffnnError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| HffnnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HffnnError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HffnnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn check_samples(samples: &[Sample], classes: usize, d_in: usize) -> Result<(), HffnnError> {
    if samples.is_empty() {
        return Err(HffnnError::EmptyDataset);
    }
    for s in samples {
        if s.label >= classes {
            return Err(HffnnError::LabelOutOfRange {
                label: s.label,
                classes,
            });
        }
        match *s.input.shape() {
            [p, w] if p >= 1 && w == d_in => {}
            [_, w] => return Err(HffnnError::WidthMismatch { expected: d_in, got: w }),
            ref shape => {
                return Err(HffnnError::Config(format!("input shape {shape:?} is not p x d_in")))
            }
        }
    }
    Ok(())
}

/// Loss and parameter gradients for one sample.
fn sample_gradients(
    ckpt: &ModelCheckpoint,
    sample: &Sample,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<(f64, ParamGrads), HffnnError> {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, &ckpt.params)?;
    let logits = forward(
        &mut g,
        ckpt.architecture,
        &bound,
        &ckpt.config,
        &sample.input,
        rng,
        true,
    )?;
    let loss = g.cross_entropy(logits, sample.label)?;
    let grads = g.backward(loss)?;
    let per_param = bound
        .iter()
        .map(|(name, &var)| (name.clone(), grads.get_or_zeros(var, ckpt.params[name].len())))
        .collect();
    Ok((g.value(loss).item()?, per_param))
}

/// Minibatch cross-entropy training with Adam for `config.epochs` epochs.
pub fn train(
    architecture: Architecture,
    samples: &[Sample],
    classes: usize,
    config: &HffnnConfig,
) -> Result<ModelCheckpoint, HffnnError> {
    train_until(architecture, samples, classes, config, |_, _| false)
}

/// As [`train`], calling `stop` after every epoch; training ends early when
/// it returns true.
pub fn train_until(
    architecture: Architecture,
    samples: &[Sample],
    classes: usize,
    config: &HffnnConfig,
    mut stop: impl FnMut(&EpochReport, &ModelCheckpoint) -> bool,
) -> Result<ModelCheckpoint, HffnnError> {
    let mut ckpt = ModelCheckpoint::init(architecture, classes, config)?;
    check_samples(samples, classes, config.d_in)?;
    let scaled: Vec<Sample>;
    let samples = if config.standardize_inputs {
        let scaling = InputScaling::fit(samples);
        scaled = samples
            .iter()
            .map(|s| Sample {
                input: scaling.apply(&s.input),
                label: s.label,
            })
            .collect();
        ckpt.input_scaling = Some(scaling);
        &scaled
    } else {
        samples
    };
    // Initialisation consumed the first stream; shuffling and noise use the next.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    rng.long_jump();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), &ckpt.params);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut total: ParamGrads = ckpt
                .params
                .iter()
                .map(|(name, t)| (name.clone(), vec![0.0; t.len()]))
                .collect();
            for &i in batch {
                let (loss, grads) = sample_gradients(&ckpt, &samples[i], &mut rng)?;
                epoch_loss += loss;
                for (name, g) in grads {
                    let acc = total.get_mut(&name).expect("same parameter set");
                    acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            total
                .values_mut()
                .for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
            adam_step(&mut ckpt.params, &total, &mut adam)?;
        }
        let report = EpochReport {
            epoch,
            loss: epoch_loss / samples.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.6}", report.loss);
        ckpt.metadata.epochs_run = epoch;
        ckpt.metadata.loss_history.push(report.loss);
        if stop(&report, &ckpt) {
            break;
        }
    }
    Ok(ckpt)
}

/// Class probabilities for one input, with noise disabled.
pub fn predict_proba(ckpt: &ModelCheckpoint, input: &Tensor) -> Result<Vec<f64>, HffnnError> {
    match *input.shape() {
        [_, w] if w != ckpt.config.d_in => {
            return Err(HffnnError::WidthMismatch {
                expected: ckpt.config.d_in,
                got: w,
            })
        }
        _ => {}
    }
    let scaled = ckpt.input_scaling.as_ref().map(|s| s.apply(input));
    let input = scaled.as_ref().unwrap_or(input);
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, &ckpt.params)?;
    // Inference draws no noise; the generator is never advanced.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
    let logits = forward(
        &mut g,
        ckpt.architecture,
        &bound,
        &ckpt.config,
        input,
        &mut rng,
        false,
    )?;
    let probs = g.softmax_rows(logits)?;
    Ok(g.value(probs).data().to_vec())
}

/// Argmax class, first index on ties.
pub fn predict(ckpt: &ModelCheckpoint, input: &Tensor) -> Result<usize, HffnnError> {
    let probs = predict_proba(ckpt, input)?;
    Ok(probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0)
}

pub fn evaluate(ckpt: &ModelCheckpoint, samples: &[Sample]) -> Result<Metrics, HffnnError> {
    check_samples(samples, ckpt.classes, ckpt.config.d_in)?;
    let predictions = samples
        .iter()
        .map(|s| predict(ckpt, &s.input))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(compute_metrics(&predictions, &labels, ckpt.classes)?)
}
