use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GuidanceTransform, PipelineError};
use crate::hffnn::HffnnConfig;

/// Network hyperparameters plus the pipeline-level guidance settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: HffnnConfig,
    pub guidance_transform: GuidanceTransform,
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| PipelineError::Config {
        line,
        message: format!("{key} = '{value}': {e}"),
    })
}

/// Parses flat `key = value` text. Blank lines and `#` comments are
/// skipped; absent keys keep their defaults and unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig, PipelineError> {
    let mut config = RunConfig::default();
    let m = &mut config.model;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| PipelineError::Config {
            line,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "lr" => m.lr = parse_value(line, key, value)?,
            "epochs" => m.epochs = parse_value(line, key, value)?,
            "batch_size" => m.batch_size = parse_value(line, key, value)?,
            "repeats" => m.repeats = parse_value(line, key, value)?,
            "d_model" => m.d_model = parse_value(line, key, value)?,
            "filters_per_kernel" => m.filters_per_kernel = parse_value(line, key, value)?,
            "noise_std" => m.noise_std = parse_value(line, key, value)?,
            "tau_filter" => m.tau_filter = parse_value(line, key, value)?,
            "tau_out" => m.tau_out = parse_value(line, key, value)?,
            "seed" => m.seed = parse_value(line, key, value)?,
            "standardize_inputs" => m.standardize_inputs = parse_value(line, key, value)?,
            "activation" => m.activation = parse_value(line, key, value)?,
            "kernel_sizes" => {
                m.kernel_sizes = value
                    .split(',')
                    .map(|v| parse_value(line, key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "guidance_transform" => config.guidance_transform = parse_value(line, key, value)?,
            other => {
                return Err(PipelineError::Config {
                    line,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
    }
    config.model.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn defaults_follow_the_training_setup() {
        let c = parse_config("").unwrap();
        assert_eq!(c.model.lr, 1e-5);
        assert_eq!(c.model.epochs, 50);
        assert_eq!(c.model.batch_size, 128);
        assert_eq!(c.model.repeats, 5);
        assert_eq!(c.model.kernel_sizes, vec![2, 3, 4, 5, 6]);
        assert_eq!(c.guidance_transform, GuidanceTransform::SignedLog);
    }

    #[test]
    fn keys_override_defaults() {
        let text = "# desk run\nlr = 0.01\nepochs=3\n\nd_model = 8 # small\nseed = 42\n\
                    activation = relu\nkernel_sizes = 2, 3\nguidance_transform = identity\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.model.lr, 0.01);
        assert_eq!(c.model.epochs, 3);
        assert_eq!(c.model.d_model, 8);
        assert_eq!(c.model.seed, 42);
        assert_eq!(c.model.activation, Activation::Relu);
        assert_eq!(c.model.kernel_sizes, vec![2, 3]);
        assert_eq!(c.guidance_transform, GuidanceTransform::Identity);
    }

    #[test]
    fn bad_lines_are_reported() {
        let err = parse_config("lr = 1\nbogus = 2").unwrap_err();
        assert!(matches!(err, PipelineError::Config { line: 2, .. }), "{err}");
        let err = parse_config("epochs = many").unwrap_err();
        assert!(matches!(err, PipelineError::Config { line: 1, .. }), "{err}");
        assert!(parse_config("no equals sign").is_err());
        assert!(parse_config("batch_size = 0").is_err());
    }
}
