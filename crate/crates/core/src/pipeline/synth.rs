//! Synthetic hazard corpus.
//!
//! Each record's token embeddings carry a class-dependent oscillation with
//! an exponential envelope along a shared loading vector, so the row means
//! trace a noisy periodic series whose period identifies the class. A short
//! class-specific motif with zero row mean is planted at a random position
//! for the local encoder, and isotropic noise covers everything.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::hts::{HazardRecord, Labels, Theme};
use crate::metrics::{compute_metrics, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    /// Number of classes, 2 to 5. Class `c` is level `c + 1` for severity
    /// and possibility; risk is capped at level 4.
    pub classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub d_emb: usize,
    /// Oscillation period of class 0, in tokens.
    pub base_period: f64,
    /// Period ratio between consecutive classes.
    pub period_ratio: f64,
    pub amplitude: f64,
    /// Per-record amplitude factor `exp(u)` with `u` uniform in `[-s, s]`.
    pub amplitude_spread: f64,
    /// Exponential growth rate of the envelope.
    pub growth: f64,
    pub motif_strength: f64,
    pub motif_len: usize,
    pub noise: f64,
    /// Relative per-record spread of period and growth.
    pub jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 120,
            classes: 3,
            min_len: 24,
            max_len: 32,
            d_emb: 16,
            base_period: 4.0,
            period_ratio: 1.5,
            amplitude: 1.0,
            amplitude_spread: 0.0,
            growth: 0.03,
            motif_strength: 0.5,
            motif_len: 3,
            noise: 1.0,
            jitter: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Spec(m));
        if self.n == 0 {
            return fail("n must be positive".into());
        }
        if !(2..=5).contains(&self.classes) {
            return fail(format!("classes = {}, expected 2..=5", self.classes));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("length range {}..={} is empty", self.min_len, self.max_len));
        }
        if self.d_emb == 0 {
            return fail("d_emb must be positive".into());
        }
        if self.motif_len > self.min_len {
            return fail("motif_len exceeds min_len".into());
        }
        let reals = [
            self.base_period,
            self.period_ratio,
            self.amplitude,
            self.amplitude_spread,
            self.growth,
            self.motif_strength,
            self.noise,
            self.jitter,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return fail("parameters must be finite".into());
        }
        if self.base_period <= 0.0 || self.period_ratio <= 1.0 {
            return fail("base_period must be positive and period_ratio above 1".into());
        }
        if self.amplitude < 0.0
            || self.amplitude_spread < 0.0
            || self.motif_strength < 0.0
            || self.noise < 0.0
        {
            return fail("amplitudes, motif_strength and noise must be non-negative".into());
        }
        // Jittered periods of neighbouring classes must not overlap.
        if !(0.0..1.0).contains(&self.jitter)
            || (1.0 + self.jitter) >= self.period_ratio * (1.0 - self.jitter)
        {
            return fail(format!("jitter {} lets neighbouring classes overlap", self.jitter));
        }
        Ok(())
    }

    pub fn period(&self, class: usize) -> f64 {
        self.base_period * self.period_ratio.powi(class as i32)
    }
}

/// Ground truth behind one generated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingParams {
    pub class: usize,
    pub period: f64,
    pub growth: f64,
    pub phase: f64,
    pub motif_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<HazardRecord>,
    pub params: Vec<GeneratingParams>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput, PipelineError> {
    spec.validate()?;
    let d = spec.d_emb;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);

    let mut loading: Vec<f64> = (0..d).map(|_| 1.0 + 0.5 * normal(&mut rng)).collect();
    let mean = loading.iter().sum::<f64>() / d as f64;
    loading.iter_mut().for_each(|v| *v /= mean);

    let motifs: Vec<Vec<Vec<f64>>> = (0..spec.classes)
        .map(|_| {
            (0..spec.motif_len)
                .map(|_| {
                    let mut row: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
                    let m = row.iter().sum::<f64>() / d as f64;
                    row.iter_mut().for_each(|v| *v -= m);
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    row.iter_mut().for_each(|v| *v *= (d as f64).sqrt() / norm);
                    row
                })
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(spec.n);
    let mut params = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = i % spec.classes;
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let period = spec.period(class) * (1.0 + spec.jitter * rng.random_range(-1.0..1.0));
        let growth = spec.growth * (1.0 + spec.jitter * rng.random_range(-1.0..1.0));
        let phase = rng.random_range(0.0..2.0 * PI);
        let amplitude = spec.amplitude * (spec.amplitude_spread * rng.random_range(-1.0..=1.0)).exp();
        let motif_start = rng.random_range(0..=len - spec.motif_len);

        let embedding = (0..len)
            .map(|k| {
                let t = (k + 1) as f64;
                let level = amplitude * (growth * t).exp() * (2.0 * PI * t / period + phase).sin();
                let motif = (motif_start..motif_start + spec.motif_len)
                    .contains(&k)
                    .then(|| &motifs[class][k - motif_start]);
                (0..d)
                    .map(|j| {
                        let planted = motif.map_or(0.0, |m| spec.motif_strength * m[j]);
                        level * loading[j] + planted + spec.noise * normal(&mut rng)
                    })
                    .collect()
            })
            .collect();
        let level = (class + 1) as u8;
        records.push(HazardRecord {
            id: format!("syn-{seed}-{i:05}"),
            tokens: (0..len).map(|k| format!("t{k}")).collect(),
            embedding,
            labels: Labels {
                severity: level,
                possibility: level,
                risk: level.min(Theme::Risk.classes() as u8),
            },
        });
        params.push(GeneratingParams {
            class,
            period,
            growth,
            phase,
            motif_start,
        });
    }
    Ok(SynthOutput { records, params })
}

/// Nearest-centroid classifier on the log generating period, scored on the
/// data it was fitted to. Its decision functions are affine in the feature,
/// so it is a linear probe of class separability.
pub fn linear_probe(params: &[GeneratingParams], classes: usize) -> Result<Metrics, PipelineError> {
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for p in params {
        sums[p.class] += p.period.ln();
        counts[p.class] += 1;
    }
    let centroids: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let predictions: Vec<usize> = params
        .iter()
        .map(|p| {
            let x = p.period.ln();
            centroids
                .iter()
                .enumerate()
                .filter_map(|(c, m)| m.map(|m| (c, (x - m).abs())))
                .fold((0, f64::INFINITY), |best, (c, dist)| if dist < best.1 { (c, dist) } else { best })
                .0
        })
        .collect();
    let labels: Vec<usize> = params.iter().map(|p| p.class).collect();
    Ok(compute_metrics(&predictions, &labels, classes)?)
}
