use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    head_logits, sdm_forward, ConvParams, FilterGate, GameWeights, StageWeights,
};
use super::{HffnnConfig, HffnnError};
use crate::nn::{xavier_uniform, Graph, NnError, ParamStore, Tensor, Var};

/// Number of stacked fusion stages.
pub const STAGES: usize = 3;

/// Which network a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Input projection, three fusion stages and the softmax head.
    Hffnn,
    /// Token-mean of the input straight into the softmax head.
    FcHead,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Glorot-uniform with the given fans.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn weight(name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        init: Init::Xavier { fan_in, fan_out },
    }
}

fn bias(name: String, len: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape: vec![len],
        init: Init::Zeros,
    }
}

fn layout(arch: Architecture, config: &HffnnConfig, classes: usize) -> Vec<ParamSpec> {
    let d = config.d_model;
    let f = config.filters_per_kernel;
    let mut specs = Vec::new();
    match arch {
        Architecture::FcHead => {
            specs.push(weight("head.w".into(), vec![config.d_in, classes], config.d_in, classes));
            specs.push(bias("head.b".into(), classes));
        }
        Architecture::Hffnn => {
            specs.push(weight("input.w".into(), vec![config.d_in, d], config.d_in, d));
            specs.push(bias("input.b".into(), d));
            for stage in 0..STAGES {
                let width = d * (stage + 1);
                for &h in &config.kernel_sizes {
                    let p = format!("s{stage}.conv{h}");
                    specs.push(weight(format!("{p}.k"), vec![f, h, width], h * width, f));
                    specs.push(bias(format!("{p}.b"), f));
                    let p = format!("s{stage}.gate{h}");
                    specs.push(weight(format!("{p}.filter.w"), vec![f, f], f, f));
                    specs.push(bias(format!("{p}.filter.b"), f));
                    specs.push(weight(format!("{p}.local.w"), vec![f, f], f, f));
                    specs.push(bias(format!("{p}.local.b"), f));
                }
                let r_width = f * config.kernel_sizes.len();
                let p = format!("s{stage}");
                specs.push(weight(format!("{p}.proj.w"), vec![r_width, d], r_width, d));
                specs.push(weight(format!("{p}.fuse.w"), vec![d, d], d, d));
                specs.push(bias(format!("{p}.fuse.b"), d));
                specs.push(weight(format!("{p}.fuse.v"), vec![d, d], d, d));
                specs.push(bias(format!("{p}.fuse.d"), d));
                specs.push(weight(format!("{p}.out.w"), vec![d, d], d, d));
                specs.push(bias(format!("{p}.out.b"), d));
            }
            specs.push(weight("head.w".into(), vec![d, classes], d, classes));
            specs.push(bias("head.b".into(), classes));
        }
    }
    specs
}

/// Freshly initialised parameters: Glorot-uniform weights, zero biases.
pub fn init_params(
    arch: Architecture,
    config: &HffnnConfig,
    classes: usize,
    rng: &mut impl Rng,
) -> ParamStore {
    layout(arch, config, classes)
        .into_iter()
        .map(|spec| {
            let tensor = match spec.init {
                Init::Xavier { fan_in, fan_out } => {
                    xavier_uniform(&spec.shape, fan_in, fan_out, rng)
                }
                Init::Zeros => Tensor::zeros(&spec.shape),
            };
            (spec.name, tensor)
        })
        .collect()
}

/// Checks that `params` holds exactly the tensors the layout requires.
pub fn validate_params(
    arch: Architecture,
    config: &HffnnConfig,
    classes: usize,
    params: &ParamStore,
) -> Result<(), HffnnError> {
    let specs = layout(arch, config, classes);
    if specs.len() != params.len() {
        return Err(HffnnError::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for spec in specs {
        let tensor = params
            .get(&spec.name)
            .ok_or_else(|| HffnnError::Checkpoint(format!("missing parameter '{}'", spec.name)))?;
        if tensor.shape() != spec.shape.as_slice() {
            return Err(HffnnError::Checkpoint(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                spec.name,
                tensor.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}

/// Parameters placed on a graph as differentiable leaves.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(g: &mut Graph, params: &ParamStore) -> Result<Self, NnError> {
        let vars = params
            .iter()
            .map(|(name, t)| Ok((name.clone(), g.input(t.clone())?)))
            .collect::<Result<_, NnError>>()?;
        Ok(Self { vars })
    }

    /// Pairs names with leaves already on the graph.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a String>, vars: &[Var]) -> Self {
        Self {
            vars: names.into_iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, NnError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Weights of one stacking stage.
    pub fn stage(&self, stage: usize, kernel_sizes: &[usize]) -> Result<StageWeights, NnError> {
        let mut convs = Vec::with_capacity(kernel_sizes.len());
        let mut filters = Vec::with_capacity(kernel_sizes.len());
        for &h in kernel_sizes {
            convs.push(ConvParams {
                window: h,
                kernels: self.get(&format!("s{stage}.conv{h}.k"))?,
                bias: self.get(&format!("s{stage}.conv{h}.b"))?,
            });
            let p = format!("s{stage}.gate{h}");
            filters.push(FilterGate {
                gate_w: self.get(&format!("{p}.filter.w"))?,
                gate_b: self.get(&format!("{p}.filter.b"))?,
                local_w: self.get(&format!("{p}.local.w"))?,
                local_b: self.get(&format!("{p}.local.b"))?,
            });
        }
        let p = format!("s{stage}");
        Ok(StageWeights {
            convs,
            game: GameWeights {
                filters,
                proj: self.get(&format!("{p}.proj.w"))?,
                fuse_w: self.get(&format!("{p}.fuse.w"))?,
                fuse_b: self.get(&format!("{p}.fuse.b"))?,
                fuse_v: self.get(&format!("{p}.fuse.v"))?,
                fuse_d: self.get(&format!("{p}.fuse.d"))?,
                out_w: self.get(&format!("{p}.out.w"))?,
                out_b: self.get(&format!("{p}.out.b"))?,
            },
        })
    }
}

/// Logits for one `p x d_in` input.
pub fn forward(
    g: &mut Graph,
    arch: Architecture,
    bound: &Bound,
    config: &HffnnConfig,
    input: &Tensor,
    rng: &mut impl Rng,
    training: bool,
) -> Result<Var, NnError> {
    let (p, width) = match *input.shape() {
        [p, w] if p >= 1 => (p, w),
        ref s => return Err(NnError::Shape(format!("input shape {s:?}"))),
    };
    if width != config.d_in {
        return Err(NnError::Shape(format!(
            "input width {width}, model expects {}",
            config.d_in
        )));
    }
    let head_w = bound.get("head.w")?;
    let head_b = bound.get("head.b")?;
    match arch {
        Architecture::FcHead => {
            let mut mean = vec![0.0; width];
            for i in 0..p {
                mean.iter_mut().zip(input.row(i)).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= p as f64);
            let pooled = g.constant(Tensor::vector(mean))?;
            head_logits(g, pooled, head_w, head_b)
        }
        Architecture::Hffnn => {
            let x = g.constant(input.clone())?;
            let projected = g.linear(x, bound.get("input.w")?, bound.get("input.b")?)?;
            let stages = (0..STAGES)
                .map(|s| bound.stage(s, &config.kernel_sizes))
                .collect::<Result<Vec<_>, _>>()?;
            let phi = sdm_forward(g, projected, &stages, config.layer_settings(), rng, training)?;
            head_logits(g, phi, head_w, head_b)
        }
    }
}
