use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spiral_core::checkpoint::load_checkpoint;
use spiral_core::config::{parse_override, parse_pairs, Config};
use spiral_core::{run, Error};

/// Self-supervised speech pre-training, CTC fine-tuning and collapse diagnostics.
#[derive(Parser, Debug)]
#[command(name = "spiral", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_str(self) -> &'static str {
        match self {
            Switch::On => "true",
            Switch::Off => "false",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus: WAVs, manifest.tsv and alignments.tsv.
    SynthCorpus {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train a model from scratch.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Manifest of noise clips; a synthetic bank is used when absent.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Feed the teacher the perturbed (noisy, masked) input too.
        #[arg(long)]
        perturb_teacher: bool,
        #[arg(long, value_enum)]
        teacher_computation_noise: Option<Switch>,
        #[arg(long, value_enum)]
        position_randomization: Option<Switch>,
        #[arg(long, value_enum)]
        predictor: Option<Switch>,
    },
    /// CTC fine-tuning from a pre-training checkpoint (or a random encoder).
    Finetune {
        /// Pre-training checkpoint; its configuration is the base unless --config is given.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy-decode a manifest and report WER/CER.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON-lines report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Position/content probes and constant-output score of a pre-trained student.
    Diagnose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        align: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump perturbed student features for inspection.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn overrides(common: &Common, extra: Vec<(String, String)>) -> Result<Vec<(String, String)>> {
    let mut out = common
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<spiral_core::Result<Vec<_>>>()?;
    out.extend(extra);
    if let Some(seed) = common.seed {
        out.push(("seed".into(), seed.to_string()));
    }
    Ok(out)
}

fn load_config(common: &Common, extra: Vec<(String, String)>) -> Result<Config> {
    Ok(Config::load(common.config.as_deref(), &overrides(common, extra)?)?)
}

/// Configuration for fine-tuning: the checkpoint's own unless `--config` is given.
fn finetune_config(common: &Common, init: Option<&Path>, extra: Vec<(String, String)>) -> Result<Config> {
    match (init, &common.config) {
        (Some(p), None) => {
            let ckpt = load_checkpoint::<f64>(p)?;
            let mut pairs = parse_pairs(&ckpt.config_text)?;
            pairs.extend(overrides(common, extra)?);
            Ok(Config::from_pairs(&pairs)?)
        }
        _ => load_config(common, extra),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::SynthCorpus { n, out } => {
            let cfg = load_config(common, vec![])?;
            let manifest = run::synth_corpus(&cfg, n, &out)?;
            println!("{}", manifest.display());
        }
        Command::Pretrain {
            data,
            noise,
            out,
            perturb_teacher,
            teacher_computation_noise,
            position_randomization,
            predictor,
        } => {
            let mut extra = Vec::new();
            if perturb_teacher {
                extra.push(("ablation.perturb_teacher".to_string(), "true".to_string()));
            }
            for (key, s) in [
                ("ablation.teacher_computation_noise", teacher_computation_noise),
                ("position.randomize", position_randomization),
                ("model.predictor.enabled", predictor),
            ] {
                if let Some(s) = s {
                    extra.push((key.to_string(), s.as_str().to_string()));
                }
            }
            let cfg = load_config(common, extra)?;
            let s = run::pretrain(&cfg, &data, noise.as_deref(), &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Finetune {
            init,
            mode,
            data,
            noise,
            out,
        } => {
            let extra = mode.map(|m| vec![("finetune.mode".to_string(), m)]).unwrap_or_default();
            let cfg = finetune_config(common, init.as_deref(), extra)?;
            let s = run::finetune(&cfg, init.as_deref(), &data, noise.as_deref(), &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Eval { ckpt, data, out } => {
            let r = run::eval(&ckpt, &data, &out)?;
            println!("{{\"wer\":{},\"cer\":{},\"utterances\":{}}}", r.wer, r.cer, r.utterances.len());
        }
        Command::Diagnose { ckpt, data, align, out } => {
            let r = run::diagnose(&ckpt, &data, align.as_deref(), &out)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Augment { data, noise, out } => {
            let cfg = load_config(common, vec![])?;
            let n = run::augment(&cfg, &data, noise.as_deref(), &out)?;
            println!("{n}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPIRAL_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(cli).context("spiral failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
