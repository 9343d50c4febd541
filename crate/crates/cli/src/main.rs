//! `greyguide` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use greyguide_core::grey::PIPELINE_ORDER;
use greyguide_core::hffnn::ModelCheckpoint;
use greyguide_core::hts::{load_records, write_records, HazardRecord, Theme};
use greyguide_core::metrics::Metrics;
use greyguide_core::pipeline::{
    evaluate_checkpoint, extract_all, load_config, read_cache, run_variant, split_dataset, subset,
    sweep_order, synth_generate, train_variant, write_cache, GuidanceEntry, GuidanceModel,
    RunConfig, RunReport, SynthSpec, Variant,
};

#[derive(Parser)]
#[command(name = "greyguide", version, about = "Grey-guided hazard level classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a JSON generator spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit grey guidance for every record and write the cache.
    ExtractGg {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = PIPELINE_ORDER)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "fsgm")]
        model: GuidanceModel,
    },
    /// Train one ablation variant on every record of the input.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        theme: Theme,
        #[arg(long)]
        variant: Variant,
        /// Flat `key = value` file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Guidance cache written by `extract-gg`.
        #[arg(long)]
        guidance: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        theme: Theme,
        #[arg(long)]
        guidance: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Sweep the guidance order and score a softmax head at each one.
    SweepN {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        theme: Theme,
        #[arg(long, default_value_t = 1)]
        min: usize,
        #[arg(long, default_value_t = 10)]
        max: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write an 8:1:1 split as `<prefix>.train.ndjson`, `.test.ndjson` and `.val.ndjson`.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Split once, then train and score the chosen variants over repeats.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        theme: Theme,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',', default_value = "dlgm1,dlgm2,dlgm3,dlgm4")]
        variants: Vec<Variant>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        guidance: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Serialize)]
struct EvalReport<'a> {
    theme: Theme,
    records: usize,
    checkpoint: &'a Path,
    tags: &'a std::collections::BTreeMap<String, String>,
    metrics: Metrics,
    config: &'a greyguide_core::hffnn::HffnnConfig,
}

fn records(path: &Path) -> Result<Vec<HazardRecord>> {
    let records = load_records(path).with_context(|| format!("loading {}", path.display()))?;
    log::info!("{}: {} records", path.display(), records.len());
    Ok(records)
}

fn config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn cache(path: Option<&Path>) -> Result<Option<Vec<GuidanceEntry>>> {
    path.map(|p| read_cache(p).with_context(|| format!("loading guidance cache {}", p.display())))
        .transpose()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seed, out } => {
            let text = fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", spec.display()))?;
            let generated = synth_generate(&spec, seed)?;
            write_records(&out, &generated.records)?;
            log::info!("wrote {} records to {}", generated.records.len(), out.display());
        }
        Command::ExtractGg {
            input,
            order,
            out,
            model,
        } => {
            if order == 0 {
                bail!("--order must be at least 1");
            }
            let entries = extract_all(&records(&input)?, model, order);
            let degenerate = entries.iter().filter(|e| e.degenerate).count();
            if degenerate > 0 {
                log::warn!("{degenerate} of {} records have degenerate guidance", entries.len());
            }
            write_cache(&out, &entries)?;
        }
        Command::Train {
            input,
            theme,
            variant,
            config: config_path,
            guidance,
            out,
        } => {
            let records = records(&input)?;
            let cfg = config(config_path.as_deref())?;
            let cache = cache(guidance.as_deref())?;
            let ckpt = train_variant(variant, theme, &records, &cfg, cache.as_deref())?;
            if let Some(loss) = ckpt.metadata.loss_history.last() {
                log::info!("final training loss {loss:.6}");
            }
            ckpt.save(&out)?;
        }
        Command::Eval {
            ckpt,
            input,
            theme,
            guidance,
            report,
        } => {
            let model = ModelCheckpoint::load(&ckpt)?;
            let records = records(&input)?;
            let cache = cache(guidance.as_deref())?;
            let metrics = evaluate_checkpoint(&model, &records, theme, cache.as_deref())?;
            log::info!(
                "macro-F1 {:.4}, weighted-F1 {:.4}, accuracy {:.4}",
                metrics.macro_avg.f1,
                metrics.weighted.f1,
                metrics.accuracy
            );
            write_json(
                &report,
                &EvalReport {
                    theme,
                    records: records.len(),
                    checkpoint: &ckpt,
                    tags: &model.tags,
                    metrics,
                    config: &model.config,
                },
            )?;
        }
        Command::SweepN {
            input,
            theme,
            min,
            max,
            config: config_path,
            split_seed,
            report,
        } => {
            if min == 0 || min > max {
                bail!("order range {min}..={max} is invalid");
            }
            let records = records(&input)?;
            let cfg = config(config_path.as_deref())?;
            let split = split_dataset(records.len(), split_seed)?;
            write_json(&report, &sweep_order(&records, theme, &split, min..=max, &cfg)?)?;
        }
        Command::Split {
            input,
            seed,
            out_prefix,
        } => {
            let records = records(&input)?;
            let split = split_dataset(records.len(), seed)?;
            for (suffix, part) in [
                (".train.ndjson", &split.train),
                (".test.ndjson", &split.test),
                (".val.ndjson", &split.validation),
            ] {
                let path = with_suffix(&out_prefix, suffix);
                write_records(&path, &subset(&records, part))?;
                log::info!("wrote {} records to {}", part.len(), path.display());
            }
        }
        Command::Run {
            input,
            theme,
            variants,
            config: config_path,
            guidance,
            split_seed,
            report,
        } => {
            let records = records(&input)?;
            let cfg = config(config_path.as_deref())?;
            let cache = cache(guidance.as_deref())?;
            let split = split_dataset(records.len(), split_seed)?;
            let reports = variants
                .iter()
                .map(|&v| {
                    let r = run_variant(v, theme, &records, &split, &cfg, cache.as_deref())?;
                    log::info!("{v}: mean test macro-F1 {:.4}", r.mean_test.macro_f1);
                    Ok(r)
                })
                .collect::<Result<Vec<RunReport>>>()?;
            write_json(&report, &reports)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        log::error!("{e:#}");
        std::process::exit(1);
    }
}
