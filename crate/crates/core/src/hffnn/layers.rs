//! Forward passes of the sentence-level encoder, the multi-window local
//! encoder, the gated fusion block and their three-stage stacking.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::{Activation, Graph, NnError, Tensor, Var};

/// Sentence-level encoder.
///
/// `C = softmax_rows((X X^T + N) / sqrt(d))`, `v = softmax(1 - diag(C))`,
/// `f_s = v X`. The noise `N` is a `p x p` Gaussian sample while training
/// and zero otherwise. A single row comes back unchanged.
pub fn slfe_forward(
    g: &mut Graph,
    x: Var,
    noise_std: f64,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Var, NnError> {
    let (p, d) = match *g.shape(x) {
        [p, d] if p >= 1 => (p, d),
        ref s => return Err(NnError::Shape(format!("slfe input {s:?}"))),
    };
    let xt = g.transpose(x)?;
    let mut scores = g.matmul(x, xt)?;
    if training && noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std)
            .map_err(|e| NnError::Invalid(format!("noise std {noise_std}: {e}")))?;
        let noise: Vec<f64> = (0..p * p).map(|_| normal.sample(rng)).collect();
        let noise = g.constant(Tensor::new(vec![p, p], noise)?)?;
        scores = g.add(scores, noise)?;
    }
    let scaled = g.affine(scores, 1.0 / (d as f64).sqrt(), 0.0)?;
    let attention = g.softmax_rows(scaled)?;
    let diag = g.diag(attention)?;
    let complement = g.affine(diag, -1.0, 1.0)?;
    let weights = g.softmax_rows(complement)?;
    g.matmul(weights, x)
}

/// Convolution bank entry for one window length.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub window: usize,
    /// `F x window x d`.
    pub kernels: Var,
    /// `F`.
    pub bias: Var,
}

/// Multi-window local encoder: one valid convolution per window length,
/// the configured activation, then a global max over positions. Sequences
/// shorter than a window are zero-padded at the tail to that window.
pub fn llfe_forward(
    g: &mut Graph,
    x: Var,
    convs: &[ConvParams],
    activation: Activation,
) -> Result<Vec<Var>, NnError> {
    convs
        .iter()
        .map(|conv| {
            let padded = g.pad_rows(x, conv.window)?;
            let features = g.conv1d(padded, conv.kernels, conv.bias, activation)?;
            g.maxpool_all(features)
        })
        .collect()
}

/// Filter gate and transform for one local branch.
#[derive(Debug, Clone, Copy)]
pub struct FilterGate {
    pub gate_w: Var,
    pub gate_b: Var,
    pub local_w: Var,
    pub local_b: Var,
}

#[derive(Debug, Clone)]
pub struct GameWeights {
    pub filters: Vec<FilterGate>,
    /// Projects the concatenated local features (`5F`) onto `d_model`.
    pub proj: Var,
    pub fuse_w: Var,
    pub fuse_b: Var,
    pub fuse_v: Var,
    pub fuse_d: Var,
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GameOutput {
    pub phi: Var,
    /// Fusion gate `Q`.
    pub gate: Var,
    /// Complementary gate `H = 1 - Q`.
    pub complement: Var,
    pub fused: Var,
    pub local: Var,
}

/// Gated fusion of sentence-level and local features.
///
/// Per branch `k`: `G_k = sigmoid(tau_filter (W f_k + b))` and
/// `r_k = tanh(W' (G_k * f_k) + b')`. The concatenated `r` is projected to
/// `d_model`, mixed with `f_s` through `Q = sigmoid(W f_s + b + V r~ + d)`
/// as `gamma = Q f_s + (1 - Q) r~`, and squashed by
/// `phi = sigmoid(tau_out (W gamma + b))`.
pub fn game_forward(
    g: &mut Graph,
    f_s: Var,
    locals: &[Var],
    weights: &GameWeights,
    tau_filter: f64,
    tau_out: f64,
) -> Result<GameOutput, NnError> {
    if locals.len() != weights.filters.len() {
        return Err(NnError::Shape(format!(
            "{} local features for {} filter gates",
            locals.len(),
            weights.filters.len()
        )));
    }
    let mut branches = Vec::with_capacity(locals.len());
    for (&f_l, gate) in locals.iter().zip(&weights.filters) {
        let pre = g.linear(f_l, gate.gate_w, gate.gate_b)?;
        let filter = g.sigmoid_tau(pre, tau_filter)?;
        let filtered = g.mul(filter, f_l)?;
        let transformed = g.linear(filtered, gate.local_w, gate.local_b)?;
        branches.push(g.tanh(transformed)?);
    }
    let r = g.concat(&branches)?;
    let local = g.matmul(r, weights.proj)?;

    let from_sentence = g.linear(f_s, weights.fuse_w, weights.fuse_b)?;
    let from_local = g.linear(local, weights.fuse_v, weights.fuse_d)?;
    let gate_pre = g.add(from_sentence, from_local)?;
    let gate = g.sigmoid(gate_pre)?;
    let complement = g.affine(gate, -1.0, 1.0)?;
    let kept = g.mul(gate, f_s)?;
    let mixed = g.mul(complement, local)?;
    let fused = g.add(kept, mixed)?;

    let out = g.linear(fused, weights.out_w, weights.out_b)?;
    let phi = g.sigmoid_tau(out, tau_out)?;
    Ok(GameOutput {
        phi,
        gate,
        complement,
        fused,
        local,
    })
}

/// Weights of one stacking stage.
#[derive(Debug, Clone)]
pub struct StageWeights {
    pub convs: Vec<ConvParams>,
    pub game: GameWeights,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSettings {
    pub noise_std: f64,
    pub tau_filter: f64,
    pub tau_out: f64,
    pub activation: Activation,
}

/// Three-stage stacking over an already projected `p x d_model` input:
///
/// ```text
/// phi   = GAME(SLFE(X),    LLFE(X))
/// phi'  = GAME(SLFE(phi),  LLFE(X'))    X'  = [X,  phi  tiled over tokens]
/// phi'' = GAME(SLFE(phi'), LLFE(X''))   X'' = [X', phi' tiled over tokens]
/// ```
///
/// `SLFE` of a single vector is the one-row case, which returns the vector.
pub fn sdm_forward(
    g: &mut Graph,
    x: Var,
    stages: &[StageWeights],
    settings: LayerSettings,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Var, NnError> {
    if stages.len() != 3 {
        return Err(NnError::Shape(format!("{} stages, expected 3", stages.len())));
    }
    let p = g.shape(x)[0];
    let mut sequence = x;
    let mut sentence = slfe_forward(g, x, settings.noise_std, rng, training)?;
    let mut phi = None;
    for (idx, stage) in stages.iter().enumerate() {
        if let Some(prev) = phi {
            let row = g.repeat_rows(prev, 1)?;
            sentence = slfe_forward(g, row, settings.noise_std, rng, training)?;
            let tiled = g.repeat_rows(prev, p)?;
            sequence = g.concat(&[sequence, tiled])?;
        }
        debug_assert_eq!(g.shape(sequence)[1], g.shape(x)[1] * (idx + 1));
        let locals = llfe_forward(g, sequence, &stage.convs, settings.activation)?;
        let out = game_forward(
            g,
            sentence,
            &locals,
            &stage.game,
            settings.tau_filter,
            settings.tau_out,
        )?;
        phi = Some(out.phi);
    }
    Ok(phi.expect("three stages ran"))
}

/// Logits `W phi'' + b` of the classification head.
pub fn head_logits(g: &mut Graph, phi: Var, head_w: Var, head_b: Var) -> Result<Var, NnError> {
    g.linear(phi, head_w, head_b)
}

/// Class probabilities of the head.
pub fn classify(g: &mut Graph, phi: Var, head_w: Var, head_b: Var) -> Result<Var, NnError> {
    let logits = head_logits(g, phi, head_w, head_b)?;
    g.softmax_rows(logits)
}
