//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma separated with
//! optional brackets (`[5, 5, 1]`). Unknown keys are errors. `model.preset` resets
//! every `model.*` key to a named preset before the remaining keys apply, whatever
//! its position.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::audio::{FrontendConfig, SynthConfig};
use crate::ctc::{FinetuneConfig, FinetuneMode};
use crate::diagnostics::DiagnoseConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NormChoice, ProjectionHead};
use crate::spiral::PretrainConfig;

/// Arithmetic precision of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Synthetic noise clips used for multi-condition training.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBankConfig {
    pub clips: usize,
    pub clip_samples: usize,
}

/// Logging, evaluation and checkpoint cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub log_every: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    /// Fraction of the manifest held out for evaluation during training.
    pub heldout_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub precision: Precision,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// `None` follows the fine-tuning mode.
    pub finetune_specaugment: Option<bool>,
    pub diagnose: DiagnoseConfig,
    pub synth: SynthConfig,
    pub noise: NoiseBankConfig,
    pub run: RunSettings,
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            precision: Precision::F32,
            frontend: FrontendConfig::default(),
            model: ModelConfig::tiny(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            finetune_specaugment: None,
            diagnose: DiagnoseConfig::default(),
            synth: SynthConfig::default(),
            noise: NoiseBankConfig {
                clips: 8,
                clip_samples: 32000,
            },
            run: RunSettings {
                log_every: 10,
                eval_every: 500,
                checkpoint_every: 1000,
                heldout_frac: 0.1,
            },
        };
        c.resolve();
        c
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(usize, u64, u32, bool);

impl Value for f64 {
    fn parse(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

fn list_items(s: &str) -> Vec<&str> {
    let s = s.trim();
    let s = s.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(s);
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(str::trim).collect()
}

impl Value for Vec<usize> {
    fn parse(s: &str) -> Option<Self> {
        list_items(s).into_iter().map(|x| x.parse().ok()).collect()
    }
    fn render(&self) -> String {
        let items: Vec<String> = self.iter().map(|v| v.to_string()).collect();
        format!("[{}]", items.join(", "))
    }
}

impl Value for (f64, f64) {
    fn parse(s: &str) -> Option<Self> {
        match list_items(s)[..] {
            [a, b] => Some((f64::parse(a)?, f64::parse(b)?)),
            _ => None,
        }
    }
    fn render(&self) -> String {
        format!("[{}, {}]", self.0.render(), self.1.render())
    }
}

impl Value for Option<bool> {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(None),
            _ => s.parse().ok().map(Some),
        }
    }
    fn render(&self) -> String {
        self.map_or("auto".into(), |b| b.to_string())
    }
}

macro_rules! enum_value {
    ($t:ty { $($name:literal => $v:expr),* $(,)? }) => {
        impl Value for $t {
            fn parse(s: &str) -> Option<Self> {
                match s {
                    $($name => Some($v),)*
                    _ => None,
                }
            }
            fn render(&self) -> String {
                $(if *self == $v { return $name.into(); })*
                unreachable!()
            }
        }
    };
}

enum_value!(Precision { "f32" => Precision::F32, "f64" => Precision::F64 });
enum_value!(NormChoice { "batch" => NormChoice::Batch, "layer" => NormChoice::Layer });
enum_value!(ProjectionHead { "linear" => ProjectionHead::Linear, "conv" => ProjectionHead::Conv });
enum_value!(FinetuneMode { "whole" => FinetuneMode::Whole, "frozen" => FinetuneMode::Frozen });

macro_rules! keys {
    ($($key:literal => $($field:ident).+ : $t:ty),* $(,)?) => {
        /// Every configuration key, in serialization order.
        pub const KEYS: &[&str] = &[$($key),*];

        fn set_key(c: &mut Config, key: &str, v: &str) -> Result<()> {
            match key {
                $($key => {
                    c.$($field).+ = <$t as Value>::parse(v).ok_or_else(|| {
                        Error::config(key, format!("cannot parse `{v}` as {}", stringify!($t)))
                    })?;
                })*
                _ => return Err(Error::config(key, "unknown key")),
            }
            Ok(())
        }

        fn entries(c: &Config) -> Vec<(&'static str, String)> {
            vec![$(($key, <$t as Value>::render(&c.$($field).+))),*]
        }
    };
}

keys! {
    "seed" => seed: u64,
    "precision" => precision: Precision,

    "frontend.sample_rate" => frontend.sample_rate: u32,
    "frontend.win" => frontend.win: usize,
    "frontend.hop" => frontend.hop: usize,
    "frontend.n_fft" => frontend.n_fft: usize,
    "frontend.n_mels" => frontend.n_mels: usize,
    "frontend.fmin" => frontend.fmin: f64,
    "frontend.fmax" => frontend.fmax: f64,

    "model.n_mels" => model.n_mels: usize,
    "model.conv1.kernels" => model.conv1.kernels: Vec<usize>,
    "model.conv1.channels" => model.conv1.channels: Vec<usize>,
    "model.conv1.strides" => model.conv1.strides: Vec<usize>,
    "model.transformer1.layers" => model.transformer1.layers: usize,
    "model.transformer1.dim" => model.transformer1.dim: usize,
    "model.transformer1.ffn_dim" => model.transformer1.ffn_dim: usize,
    "model.transformer1.heads" => model.transformer1.heads: usize,
    "model.transformer1.layerdrop" => model.transformer1.layerdrop: f64,
    "model.conv2.kernels" => model.conv2.kernels: Vec<usize>,
    "model.conv2.channels" => model.conv2.channels: Vec<usize>,
    "model.conv2.strides" => model.conv2.strides: Vec<usize>,
    "model.transformer2.layers" => model.transformer2.layers: usize,
    "model.transformer2.dim" => model.transformer2.dim: usize,
    "model.transformer2.ffn_dim" => model.transformer2.ffn_dim: usize,
    "model.transformer2.heads" => model.transformer2.heads: usize,
    "model.transformer2.layerdrop" => model.transformer2.layerdrop: f64,
    "model.projection_dim" => model.projection_dim: usize,
    "model.projection_head" => model.projection_head: ProjectionHead,
    "model.projection_conv_kernel" => model.projection_conv_kernel: usize,
    "model.predictor.enabled" => model.predictor.enabled: bool,
    "model.predictor.kernels" => model.predictor.kernels: Vec<usize>,
    "model.predictor.channels" => model.predictor.channels: Vec<usize>,
    "model.predictor.norm" => model.predictor.norm: NormChoice,
    "model.dropout" => model.dropout: f64,
    "model.pos_conv_kernel" => model.pos_conv_kernel: usize,
    "model.pos_conv_groups" => model.pos_conv_groups: usize,
    "model.ln_eps" => model.ln_eps: f64,
    "model.bn_eps" => model.bn_eps: f64,
    "model.bn_momentum" => model.bn_momentum: f64,

    "adam.beta1" => pretrain.adam.beta1: f64,
    "adam.beta2" => pretrain.adam.beta2: f64,
    "adam.eps" => pretrain.adam.eps: f64,

    "pretrain.steps" => pretrain.steps: u64,
    "pretrain.batch_size" => pretrain.batch_size: usize,
    "pretrain.lr" => pretrain.lr_peak: f64,
    "pretrain.warmup" => pretrain.warmup_frac: f64,
    "ema.alpha_start" => pretrain.alpha_start: f64,
    "ema.alpha_end" => pretrain.alpha_end: f64,
    "contrastive.num_distractors" => pretrain.contrastive.num_distractors: usize,
    "contrastive.temperature" => pretrain.contrastive.temperature: f64,
    "specaugment.enabled" => pretrain.specaugment: bool,
    "specaugment.time.p" => pretrain.time_mask.p: f64,
    "specaugment.time.len" => pretrain.time_mask.len: usize,
    "specaugment.freq.p" => pretrain.freq_mask.p: f64,
    "specaugment.freq.len" => pretrain.freq_mask.len: usize,
    "mct.enabled" => pretrain.use_mct: bool,
    "mct.prob" => pretrain.mct.apply_prob: f64,
    "mct.snr_db" => pretrain.mct.snr_db: (f64, f64),
    "position.randomize" => pretrain.position_randomization: bool,
    "position.max_pad_frames" => pretrain.max_pad_frames: usize,
    "ablation.perturb_teacher" => pretrain.perturb_teacher: bool,
    "ablation.teacher_computation_noise" => pretrain.teacher_computation_noise: bool,
    "ablation.teacher_position_signal" => pretrain.teacher_position_signal: f64,

    "finetune.mode" => finetune.mode: FinetuneMode,
    "finetune.steps" => finetune.steps: u64,
    "finetune.batch_size" => finetune.batch_size: usize,
    "finetune.lr" => finetune.lr_peak: f64,
    "finetune.phases.warmup" => finetune.warmup_frac: f64,
    "finetune.phases.hold" => finetune.hold_frac: f64,
    "finetune.phases.decay" => finetune.decay_frac: f64,
    "finetune.specaugment" => finetune_specaugment: Option<bool>,
    "finetune.specaugment.time.p" => finetune.time_mask.p: f64,
    "finetune.specaugment.time.len" => finetune.time_mask.len: usize,
    "finetune.specaugment.freq.p" => finetune.freq_mask.p: f64,
    "finetune.specaugment.freq.len" => finetune.freq_mask.len: usize,
    "finetune.mct" => finetune.use_mct: bool,
    "finetune.upsampler" => finetune.use_upsampler: bool,
    "classifier.channels" => finetune.classifier.channels: usize,
    "classifier.kernel" => finetune.classifier.kernel: usize,
    "classifier.layers" => finetune.classifier.layers: usize,

    "diagnose.position_buckets" => diagnose.position_buckets: usize,
    "diagnose.bucket_width" => diagnose.bucket_width: usize,
    "diagnose.constant_sample" => diagnose.constant_sample: usize,
    "probe.epochs" => diagnose.probe.epochs: usize,
    "probe.lr" => diagnose.probe.lr: f64,
    "probe.l2" => diagnose.probe.l2: f64,
    "probe.train_frac" => diagnose.probe.train_frac: f64,
    "probe.seed" => diagnose.probe.seed: u64,

    "synth.segment_samples" => synth.segment_samples: usize,
    "synth.base_hz" => synth.base_hz: f64,
    "synth.step_hz" => synth.step_hz: f64,
    "synth.harmonics" => synth.harmonics: usize,
    "synth.amplitude" => synth.amplitude: f64,
    "synth.noise_std" => synth.noise_std: f64,
    "synth.jitter" => synth.jitter: f64,
    "synth.fade_samples" => synth.fade_samples: usize,

    "noise.clips" => noise.clips: usize,
    "noise.clip_samples" => noise.clip_samples: usize,

    "run.log_every" => run.log_every: u64,
    "run.eval_every" => run.eval_every: u64,
    "run.checkpoint_every" => run.checkpoint_every: u64,
    "run.heldout_frac" => run.heldout_frac: f64,
}

/// Keys that describe the network architecture; they alone feed the checkpoint digest.
pub fn is_architecture_key(key: &str) -> bool {
    key.starts_with("model.")
}

fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "tiny" => Ok(ModelConfig::tiny()),
        "base" => Ok(ModelConfig::base()),
        "large" => Ok(ModelConfig::large()),
        _ => Err(Error::config("model.preset", format!("expected tiny|base|large, got `{name}`"))),
    }
}

/// Splits `key = value` text into pairs, dropping comments and blank lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", i + 1), format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::config(s, "override must look like key=value"))
}

impl Config {
    /// Defaults, then `pairs` in order, then validation.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        if let Some((_, name)) = pairs.iter().rev().find(|(k, _)| k == "model.preset") {
            c.model = preset(name)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "model.preset") {
            set_key(&mut c, k, v)?;
        }
        c.resolve();
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Reads `path` (if given) and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    /// Copies shared settings into the sections that use them.
    fn resolve(&mut self) {
        self.finetune.adam = self.pretrain.adam;
        self.finetune.mct = self.pretrain.mct.clone();
        self.finetune.use_specaugment = self
            .finetune_specaugment
            .unwrap_or(self.finetune.mode == FinetuneMode::Whole);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.frontend.n_mels != self.model.n_mels {
            return Err(Error::config(
                "model.n_mels",
                format!("{} differs from frontend.n_mels {}", self.model.n_mels, self.frontend.n_mels),
            ));
        }
        let f = &self.frontend;
        if f.win == 0 || f.hop == 0 || f.n_fft < f.win || !(f.fmin < f.fmax) || f.fmax > f.sample_rate as f64 / 2.0 {
            return Err(Error::config(
                "frontend",
                "need 0 < win <= n_fft, hop > 0 and fmin < fmax <= sample_rate / 2",
            ));
        }
        if f.sample_rate != crate::audio::SAMPLE_RATE {
            return Err(Error::config("frontend.sample_rate", "only 16000 Hz audio is supported"));
        }
        self.pretrain.validate(self.model.total_stride())?;
        self.finetune.validate()?;
        let d = &self.diagnose;
        if d.position_buckets < 2 {
            return Err(Error::config("diagnose.position_buckets", "must be at least 2"));
        }
        if d.bucket_width == 0 {
            return Err(Error::config("diagnose.bucket_width", "must be at least 1"));
        }
        if d.constant_sample < 2 {
            return Err(Error::config("diagnose.constant_sample", "must be at least 2"));
        }
        if !(d.probe.train_frac > 0.0 && d.probe.train_frac < 1.0) {
            return Err(Error::config("probe.train_frac", "must be in (0, 1)"));
        }
        if d.probe.epochs == 0 {
            return Err(Error::config("probe.epochs", "must be at least 1"));
        }
        self.synth.validate().map_err(|e| Error::config("synth", e.to_string()))?;
        if self.noise.clips == 0 || self.noise.clip_samples == 0 {
            return Err(Error::config("noise", "clips and clip_samples must be positive"));
        }
        if !(0.0..1.0).contains(&self.run.heldout_frac) {
            return Err(Error::config("run.heldout_frac", "must be in [0, 1)"));
        }
        if self.run.log_every == 0 {
            return Err(Error::config("run.log_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Every key with its value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in entries(self) {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// The architecture keys only, in the same form.
    pub fn architecture_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in entries(self).into_iter().filter(|(k, _)| is_architecture_key(k)) {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// SHA-256 of [`Self::architecture_text`].
    pub fn architecture_digest(&self) -> [u8; 32] {
        Sha256::digest(self.architecture_text().as_bytes()).into()
    }

    /// `(key, value)` pairs as JSON-ready strings.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        entries(self)
    }
}

/// SHA-256 of an architecture description as written by [`Config::architecture_text`].
pub fn digest_of(architecture_text: &str) -> [u8; 32] {
    Sha256::digest(architecture_text.as_bytes()).into()
}
