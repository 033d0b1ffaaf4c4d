use std::collections::BTreeMap;

use serde::Serialize;

use super::decode::greedy_decode;
use super::loss::ctc_loss_node;
use super::metrics::{edit_counts, EditCounts};
use super::vocab::Vocabulary;
use crate::audio::{self, FeatureSequence, MelFrontend, Waveform};
use crate::error::{Error, Result};
use crate::model::{self, ClassifierConfig, EncodeOptions, ModelConfig, Net, Noise};
use crate::numerics::{AdamConfig, AdamState, Graph, ParamSet, Real, Tensor, Var};
use crate::perturb::{self, MaskSpec, NoiseMixConfig};
use crate::rng::{self, Stream};
use crate::spiral::TrainUtterance;

/// Prefix of every encoder parameter name.
pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Encoder and classifier are both trained.
    Whole,
    /// Only the classifier (and upsampler) are trained.
    Frozen,
}

impl std::str::FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(Self::Whole),
            "frozen" => Ok(Self::Frozen),
            _ => Err(Error::config("finetune.mode", format!("expected whole|frozen, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Whole => "whole",
            Self::Frozen => "frozen",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_frac: f64,
    pub hold_frac: f64,
    pub decay_frac: f64,
    pub adam: AdamConfig,
    pub use_specaugment: bool,
    pub time_mask: MaskSpec,
    pub freq_mask: MaskSpec,
    pub use_mct: bool,
    pub mct: NoiseMixConfig,
    pub use_upsampler: bool,
    pub classifier: ClassifierConfig,
}

impl FinetuneConfig {
    /// Defaults for `mode`; SpecAugment is on for whole-model fine-tuning only.
    pub fn new(mode: FinetuneMode) -> Self {
        Self {
            mode,
            steps: 2000,
            batch_size: 8,
            lr_peak: 3e-5,
            warmup_frac: 0.1,
            hold_frac: 0.4,
            decay_frac: 0.5,
            adam: AdamConfig::default(),
            use_specaugment: mode == FinetuneMode::Whole,
            time_mask: MaskSpec::time(0.025, 20),
            freq_mask: MaskSpec::frequency(0.02, 20),
            use_mct: false,
            mct: NoiseMixConfig::default(),
            use_upsampler: false,
            classifier: ClassifierConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("finetune.steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("finetune.batch_size", "must be at least 1"));
        }
        if !(self.lr_peak >= 0.0) {
            return Err(Error::config("finetune.lr", "must be non-negative"));
        }
        let fracs = [self.warmup_frac, self.hold_frac, self.decay_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("finetune.phases", "phase fractions must lie in [0, 1] and sum to 1"));
        }
        self.time_mask
            .validate()
            .map_err(|e| Error::config("specaugment.time", e.to_string()))?;
        self.freq_mask
            .validate()
            .map_err(|e| Error::config("specaugment.freq", e.to_string()))?;
        self.mct.validate().map_err(|e| Error::config("mct", e.to_string()))?;
        Ok(())
    }
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self::new(FinetuneMode::Whole)
    }
}

/// Tri-state schedule: linear warm-up to the peak, constant, then linear decay to 0.
pub fn lr_finetune(t: u64, total: u64, cfg: &FinetuneConfig) -> f64 {
    if total == 0 || t >= total {
        return 0.0;
    }
    let f = t as f64 / total as f64;
    let (w, h) = (cfg.warmup_frac, cfg.hold_frac);
    if f < w {
        cfg.lr_peak * f / w
    } else if f <= w + h {
        cfg.lr_peak
    } else {
        cfg.lr_peak * ((1.0 - f) / cfg.decay_frac).clamp(0.0, 1.0)
    }
}

/// Transcribed utterance for fine-tuning and evaluation.
#[derive(Debug, Clone)]
pub struct LabelledUtterance {
    pub id: String,
    pub transcript: String,
    pub labels: Vec<usize>,
    pub utt: TrainUtterance,
}

impl LabelledUtterance {
    pub fn new(id: &str, transcript: &str, waveform: Waveform, vocab: &Vocabulary, frontend: &MelFrontend) -> Result<Self> {
        Ok(Self {
            id: id.to_string(),
            transcript: transcript.to_string(),
            labels: vocab.encode(transcript)?,
            utt: TrainUtterance::new(id, waveform, frontend)?,
        })
    }
}

/// Encoder plus CTC heads under fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneState<T> {
    pub step: u64,
    pub seed: u64,
    pub model: ModelConfig,
    pub cfg: FinetuneConfig,
    pub vocab: Vocabulary,
    /// `encoder.*`, `upsampler.*` and `classifier.*` entries.
    pub params: ParamSet<T>,
    pub adam: AdamState<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinetuneMetrics {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub utterances: usize,
    pub skipped: usize,
}

impl<T: Real> FinetuneState<T> {
    /// Takes the `encoder.*` entries of `init` (a student parameter set) and adds
    /// randomly initialized heads.
    pub fn new(model: ModelConfig, cfg: FinetuneConfig, vocab: Vocabulary, init: &ParamSet<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let reference: ParamSet<T> = model::build(&model, 0)?.filter_prefix(ENCODER_PREFIX);
        let encoder = init.filter_prefix(ENCODER_PREFIX);
        for (name, t) in reference.iter() {
            let got = encoder
                .get(name)
                .map_err(|_| Error::config("model", format!("initial parameters lack `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::config(
                    "model",
                    format!("`{name}` has shape {:?}, configuration expects {:?}", got.shape(), t.shape()),
                ));
            }
        }
        if encoder.len() != reference.len() {
            return Err(Error::config("model", "initial parameters carry unexpected encoder entries"));
        }
        let dim = model.transformer2.dim;
        let mut params = encoder;
        params.extend(model::build_heads(&cfg.classifier, dim, vocab.size(), cfg.use_upsampler, seed)?);
        Ok(Self {
            step: 0,
            seed,
            model,
            cfg,
            vocab,
            params,
            adam: AdamState::new(),
        })
    }

    pub fn encoder(&self) -> ParamSet<T> {
        self.params.filter_prefix(ENCODER_PREFIX)
    }

    fn frozen(&self) -> bool {
        self.cfg.mode == FinetuneMode::Frozen
    }

    fn input(&self, u: &TrainUtterance, noise_bank: &[Waveform], frontend: &MelFrontend) -> Result<FeatureSequence> {
        let coords = [self.step, u.key];
        let mut f = if self.cfg.use_mct {
            let w = u
                .waveform
                .as_ref()
                .ok_or_else(|| Error::Data("noise mixing needs the waveform".into()))?;
            let mixed = perturb::maybe_mix(w, &self.cfg.mct, noise_bank, &mut rng::stream(self.seed, Stream::Noise, &coords))?;
            audio::features(frontend, &mixed.waveform)?
        } else {
            u.features.clone()
        };
        if self.cfg.use_specaugment {
            let mut r = rng::stream(self.seed, Stream::Mask, &coords);
            f = perturb::spec_augment(&f, &self.cfg.time_mask, &self.cfg.freq_mask, &mut r)?.0;
        }
        Ok(f)
    }

    /// One CTC update over `batch`. Utterances too short for their transcript give an
    /// infinite loss and are skipped.
    pub fn step(&mut self, batch: &[LabelledUtterance], noise_bank: &[Waveform], frontend: &MelFrontend) -> Result<FinetuneMetrics> {
        if batch.is_empty() {
            return Err(Error::invalid("finetune_step", "empty batch"));
        }
        let frozen = self.frozen();
        let noise = if frozen { Noise::OFF } else { Noise::ON };
        let mut grads: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        let (mut loss_sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
        for item in batch {
            let f = self.input(&item.utt, noise_bank, frontend)?;
            let mut g = Graph::new();
            let net = Net::bind(&self.model, &self.params, &mut g, |n| !(frozen && n.starts_with(ENCODER_PREFIX)));
            let mut r = rng::stream(self.seed, Stream::StudentNoise, &[self.step, item.utt.key]);
            let lp = log_probs(&net, &mut g, &f, &self.cfg, noise, &mut r)?;
            let loss = ctc_loss_node(&mut g, lp, &item.labels)?;
            let value = g.value(loss).data()[0].f64();
            if value.is_infinite() {
                log::warn!("skipping `{}`: too few frames for its transcript", item.id);
                skipped += 1;
                continue;
            }
            if !value.is_finite() {
                return Err(Error::Numeric {
                    step: self.step + 1,
                    detail: format!("CTC loss {value} on `{}`", item.id),
                });
            }
            let mut gr = g.backward(loss)?;
            for (name, gt) in net.bound().gradients(&mut gr) {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(gt.data()).for_each(|(a, &b)| *a += b),
                    None => {
                        grads.insert(name, gt);
                    }
                }
            }
            loss_sum += value;
            used += 1;
        }
        self.step += 1;
        let lr = lr_finetune(self.step, self.cfg.steps, &self.cfg);
        if used > 0 {
            let inv = T::of(1.0 / used as f64);
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            self.adam.step(&mut self.params, &grads, lr, &self.cfg.adam)?;
        }
        Ok(FinetuneMetrics {
            step: self.step,
            loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            lr,
            utterances: used,
            skipped,
        })
    }

    /// Greedy-decoding evaluation with noise off.
    pub fn evaluate(&self, data: &[LabelledUtterance]) -> Result<EvalReport> {
        evaluate(&self.model, &self.params, &self.cfg, &self.vocab, data)
    }
}

/// Per-frame log-probabilities `[T_out, V]` (or `[4·T_out, V]` with the upsampler).
fn log_probs<T: Real>(
    net: &Net<'_, T>,
    g: &mut Graph<T>,
    f: &FeatureSequence,
    cfg: &FinetuneConfig,
    noise: Noise,
    rng: &mut impl rand::Rng,
) -> Result<Var> {
    let x = g.constant(f.to_tensor());
    let mut h = net.encode(g, x, &EncodeOptions::new(noise), rng)?;
    if cfg.use_upsampler {
        h = net.upsample(g, h)?;
    }
    let logits = net.classifier(g, h, &cfg.classifier)?;
    Ok(g.log_softmax_rows(logits))
}

/// Functional form of [`FinetuneState::step`].
pub fn finetune_step<T: Real>(
    state: &mut FinetuneState<T>,
    batch: &[LabelledUtterance],
    noise_bank: &[Waveform],
    frontend: &MelFrontend,
) -> Result<FinetuneMetrics> {
    state.step(batch, noise_bank, frontend)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub word_edits: EditCounts,
    pub char_edits: EditCounts,
    pub ref_words: usize,
    pub ref_chars: usize,
}

/// Corpus-level error rates (total edits over total reference length).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub wer: f64,
    pub cer: f64,
    pub utterances: Vec<UtteranceResult>,
}

/// Decodes every utterance greedily and scores it against its transcript.
pub fn evaluate<T: Real>(
    model: &ModelConfig,
    params: &ParamSet<T>,
    cfg: &FinetuneConfig,
    vocab: &Vocabulary,
    data: &[LabelledUtterance],
) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(data.len());
    let (mut we, mut wn, mut ce, mut cn) = (0, 0, 0, 0);
    for item in data {
        let mut g = Graph::new();
        let net = Net::bind(model, params, &mut g, |_| false);
        let mut unused = rng::stream(0, Stream::Probe, &[item.utt.key]);
        let lp = log_probs(&net, &mut g, &item.utt.features, cfg, Noise::OFF, &mut unused)?;
        let hyp = greedy_decode(g.value(lp), vocab);
        let rw: Vec<&str> = item.transcript.split_whitespace().collect();
        let hw: Vec<&str> = hyp.split_whitespace().collect();
        let rc: Vec<char> = item.transcript.chars().collect();
        let hc: Vec<char> = hyp.chars().collect();
        let (word_edits, char_edits) = (edit_counts(&rw, &hw), edit_counts(&rc, &hc));
        let r = UtteranceResult {
            id: item.id.clone(),
            reference: item.transcript.clone(),
            word_edits,
            char_edits,
            ref_words: rw.len(),
            ref_chars: rc.len(),
            hypothesis: hyp,
        };
        we += r.word_edits.total();
        wn += r.ref_words;
        ce += r.char_edits.total();
        cn += r.ref_chars;
        out.push(r);
    }
    if wn == 0 || cn == 0 {
        return Err(Error::Data("evaluation set has no reference words".into()));
    }
    Ok(EvalReport {
        wer: we as f64 / wn as f64,
        cer: ce as f64 / cn as f64,
        utterances: out,
    })
}
