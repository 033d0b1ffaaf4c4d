use std::collections::BTreeMap;

use super::contrastive::{contrastive_node, ContrastiveConfig};
use super::schedule::{alpha_at, lr_pretrain, EmaSchedule};
use crate::audio::{self, FeatureSequence, MelFrontend, Waveform};
use crate::error::{Error, Result};
use crate::model::{self, EncodeOptions, ModelConfig, Net, Noise};
use crate::numerics::{AdamConfig, AdamState, Graph, Mode, NormStats, ParamSet, Real, Tensor, PREDICTOR_PREFIX};
use crate::perturb::{self, MaskSpec, NoiseMixConfig, Padding, PositionRandomization};
use crate::rng::{self, Stream};

/// `θ′ ← α·θ′ + (1 − α)·θ` for every teacher entry; student predictor entries are
/// ignored.
pub fn ema_update<T: Real>(teacher: &mut ParamSet<T>, student: &ParamSet<T>, alpha: f64) -> Result<()> {
    teacher.ema_compatible(student)?;
    let a = T::of(alpha);
    let b = T::of(1.0 - alpha);
    for (name, t) in teacher.iter_mut() {
        let s = student.get(name)?;
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = a * *tv + b * sv;
        }
    }
    Ok(())
}

/// Everything the pre-training step needs besides the network architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_frac: f64,
    pub adam: AdamConfig,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub contrastive: ContrastiveConfig,
    pub specaugment: bool,
    pub time_mask: MaskSpec,
    pub freq_mask: MaskSpec,
    pub use_mct: bool,
    pub mct: NoiseMixConfig,
    pub position_randomization: bool,
    pub max_pad_frames: usize,
    /// Apply SpecAugment to the teacher input as well.
    pub perturb_teacher: bool,
    /// Dropout and LayerDrop in the teacher.
    pub teacher_computation_noise: bool,
    /// Amplitude of an absolute sinusoidal position signal added inside the teacher;
    /// 0 in normal operation.
    pub teacher_position_signal: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr_peak: 3e-3,
            warmup_frac: 0.08,
            adam: AdamConfig::default(),
            alpha_start: 0.995,
            alpha_end: 1.0,
            contrastive: ContrastiveConfig::default(),
            specaugment: true,
            time_mask: MaskSpec::time(0.025, 20),
            freq_mask: MaskSpec::frequency(0.02, 20),
            use_mct: false,
            mct: NoiseMixConfig::default(),
            position_randomization: true,
            max_pad_frames: 16,
            perturb_teacher: false,
            teacher_computation_noise: true,
            teacher_position_signal: 0.0,
        }
    }
}

impl PretrainConfig {
    pub fn ema(&self) -> EmaSchedule {
        EmaSchedule {
            alpha_start: self.alpha_start,
            alpha_end: self.alpha_end,
            total_steps: self.steps,
        }
    }

    pub fn validate(&self, total_stride: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("pretrain.steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be at least 1"));
        }
        if !(self.lr_peak >= 0.0) {
            return Err(Error::config("pretrain.lr", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::config("pretrain.warmup", "must be in [0, 1)"));
        }
        self.ema().validate()?;
        self.contrastive.validate()?;
        self.time_mask
            .validate()
            .map_err(|e| Error::config("specaugment.time", e.to_string()))?;
        self.freq_mask
            .validate()
            .map_err(|e| Error::config("specaugment.freq", e.to_string()))?;
        self.mct.validate().map_err(|e| Error::config("mct", e.to_string()))?;
        PositionRandomization {
            max_pad_frames: self.max_pad_frames,
            total_stride,
        }
        .validate()
            .map_err(|e| Error::config("position.max_pad_frames", e.to_string()))?;
        if self.teacher_position_signal < 0.0 {
            return Err(Error::config("ablation.teacher_position_signal", "must be non-negative"));
        }
        Ok(())
    }
}

/// One training utterance: a stable key for its random streams, the waveform
/// (needed for noise mixing) and its clean normalized features.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub key: u64,
    pub waveform: Option<Waveform>,
    pub features: FeatureSequence,
}

impl TrainUtterance {
    pub fn new(id: &str, waveform: Waveform, frontend: &MelFrontend) -> Result<Self> {
        let features = audio::features(frontend, &waveform)?;
        Ok(Self {
            key: rng::hash_str(id),
            waveform: Some(waveform),
            features,
        })
    }
}

/// Student, teacher and optimizer of a pre-training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainState<T> {
    pub step: u64,
    pub seed: u64,
    pub model: ModelConfig,
    pub cfg: PretrainConfig,
    pub student: ParamSet<T>,
    pub teacher: ParamSet<T>,
    pub adam: AdamState<T>,
}

/// Per-step training record.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub alpha: f64,
    pub lr: f64,
    pub utterances: usize,
}

impl<T: Real> PretrainState<T> {
    /// Fresh student from `seed`; the teacher starts as a copy of its shared part.
    pub fn new(model: ModelConfig, cfg: PretrainConfig, seed: u64) -> Result<Self> {
        cfg.validate(model.total_stride())?;
        let student = model::build(&model, seed)?;
        let teacher = student.without_prefix(PREDICTOR_PREFIX);
        Ok(Self {
            step: 0,
            seed,
            model,
            cfg,
            student,
            teacher,
            adam: AdamState::new(),
        })
    }

    fn position(&self) -> PositionRandomization {
        PositionRandomization {
            max_pad_frames: self.cfg.max_pad_frames,
            total_stride: self.model.total_stride(),
        }
    }

    /// Student and teacher inputs for one utterance at the current step.
    fn inputs(
        &self,
        u: &TrainUtterance,
        noise_bank: &[Waveform],
        frontend: &MelFrontend,
    ) -> Result<(FeatureSequence, FeatureSequence, Padding)> {
        let coords = [self.step, u.key];
        let cfg = &self.cfg;
        let mut student = if cfg.use_mct {
            let w = u
                .waveform
                .as_ref()
                .ok_or_else(|| Error::Data("noise mixing needs the waveform".into()))?;
            let mixed = perturb::maybe_mix(w, &cfg.mct, noise_bank, &mut rng::stream(self.seed, Stream::Noise, &coords))?;
            audio::features(frontend, &mixed.waveform)?
        } else {
            u.features.clone()
        };
        if cfg.specaugment {
            let mut r = rng::stream(self.seed, Stream::Mask, &coords);
            student = perturb::spec_augment(&student, &cfg.time_mask, &cfg.freq_mask, &mut r)?.0;
        }
        let mut teacher = u.features.clone();
        if cfg.perturb_teacher {
            let mut r = rng::stream(self.seed, Stream::Mask, &[self.step, u.key, 1]);
            teacher = perturb::spec_augment(&teacher, &cfg.time_mask, &cfg.freq_mask, &mut r)?.0;
        }
        let (teacher, padding) = if cfg.position_randomization {
            let mut r = rng::stream(self.seed, Stream::Position, &coords);
            perturb::randomize_position(&teacher, &self.position(), &mut r)?
        } else {
            (teacher, Padding::none())
        };
        Ok((student, teacher, padding))
    }

    /// One update over `batch`: per-utterance contrastive loss (mean over positions),
    /// averaged over utterances; Adam on the student; EMA of the teacher; running
    /// batch-norm statistics.
    pub fn step(&mut self, batch: &[TrainUtterance], noise_bank: &[Waveform], frontend: &MelFrontend) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::invalid("pretrain_step", "empty batch"));
        }
        let mut grads: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        let mut bn: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let (mut loss_sum, mut acc_sum, mut used) = (0.0, 0.0, 0usize);
        for u in batch {
            let coords = [self.step, u.key];
            let (fs, ft, padding) = self.inputs(u, noise_bank, frontend)?;
            let t_opts = EncodeOptions {
                noise: if self.cfg.teacher_computation_noise { Noise::ON } else { Noise::OFF },
                position_signal: self.cfg.teacher_position_signal,
            };
            let mut tr = rng::stream(self.seed, Stream::TeacherNoise, &coords);
            let target = model::teacher_forward(&self.model, &self.teacher, &ft, padding, &t_opts, &mut tr)?;
            if target.len() < 2 {
                log::warn!("skipping utterance {:#x}: {} output frames", u.key, target.len());
                continue;
            }
            let mut g = Graph::new();
            let net = Net::bind(&self.model, &self.student, &mut g, |_| true);
            let x = g.constant(fs.to_tensor());
            let mut sr = rng::stream(self.seed, Stream::StudentNoise, &coords);
            let out = net.student(&mut g, x, &EncodeOptions::new(Noise::ON), Mode::Train, &mut sr)?;
            let mut dr = rng::stream(self.seed, Stream::Distractors, &coords);
            let c = contrastive_node(&mut g, out.z, &target.frames, &self.cfg.contrastive, &mut dr)?;
            let loss = g.value(c.loss).data()[0].f64();
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    step: self.step + 1,
                    detail: format!("non-finite contrastive loss {loss}"),
                });
            }
            let mut gr = g.backward(c.loss)?;
            for (name, gt) in net.bound().gradients(&mut gr) {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(gt.data()).for_each(|(a, &b)| *a += b),
                    None => {
                        grads.insert(name, gt);
                    }
                }
            }
            for (name, s) in out.bn_stats {
                accumulate_stats(&mut bn, name, &s);
            }
            loss_sum += loss;
            acc_sum += c.accuracy;
            used += 1;
        }
        self.step += 1;
        let alpha = alpha_at(&self.cfg.ema(), self.step.min(self.cfg.steps))?;
        let lr = lr_pretrain(self.step, self.cfg.steps, self.cfg.lr_peak, self.cfg.warmup_frac);
        if used == 0 {
            log::warn!("step {}: no usable utterance in batch", self.step);
        } else {
            let inv = T::of(1.0 / used as f64);
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            self.adam.step(&mut self.student, &grads, lr, &self.cfg.adam)?;
            self.update_running(&bn, used)?;
        }
        ema_update(&mut self.teacher, &self.student, alpha)?;
        Ok(StepMetrics {
            step: self.step,
            loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            accuracy: if used > 0 { acc_sum / used as f64 } else { f64::NAN },
            alpha,
            lr,
            utterances: used,
        })
    }

    fn update_running(&mut self, bn: &BTreeMap<String, (Vec<f64>, Vec<f64>)>, n: usize) -> Result<()> {
        let m = self.model.bn_momentum;
        for (pre, (mean, var)) in bn {
            for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                let name = format!("{pre}.{suffix}");
                let r = self
                    .student
                    .get_mut(&name)
                    .ok_or_else(|| Error::invalid("pretrain_step", format!("missing buffer `{name}`")))?;
                for (rv, &b) in r.data_mut().iter_mut().zip(batch) {
                    *rv = T::of((1.0 - m) * rv.f64() + m * b / n as f64);
                }
            }
        }
        Ok(())
    }

    /// Held-out contrastive loss and accuracy: clean inputs for both networks, no
    /// padding, no computation noise, predictor in eval mode.
    pub fn evaluate(&self, data: &[TrainUtterance]) -> Result<(f64, f64)> {
        let (mut loss, mut acc, mut n) = (0.0, 0.0, 0usize);
        let off = EncodeOptions::new(Noise::OFF);
        for u in data {
            let mut unused = rng::stream(self.seed, Stream::Probe, &[u.key]);
            let target = model::teacher_forward(&self.model, &self.teacher, &u.features, Padding::none(), &off, &mut unused)?;
            if target.len() < 2 {
                continue;
            }
            let z = model::student_forward(&self.model, &self.student, &u.features, &off, &mut unused)?;
            let mut dr = rng::stream(self.seed, Stream::Distractors, &[u64::MAX, u.key]);
            let (l, a) = super::contrastive::contrastive_loss(&z.frames, &target.frames, &self.cfg.contrastive, &mut dr)?;
            loss += l;
            acc += a;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Data("no evaluation utterance has two output frames".into()));
        }
        Ok((loss / n as f64, acc / n as f64))
    }
}

fn accumulate_stats<T: Real>(bn: &mut BTreeMap<String, (Vec<f64>, Vec<f64>)>, name: String, s: &NormStats<T>) {
    let entry = bn
        .entry(name)
        .or_insert_with(|| (vec![0.0; s.mean.len()], vec![0.0; s.var.len()]));
    entry.0.iter_mut().zip(&s.mean).for_each(|(a, b)| *a += b.f64());
    entry.1.iter_mut().zip(&s.var).for_each(|(a, b)| *a += b.f64());
}

/// Functional form of [`PretrainState::step`].
pub fn pretrain_step<T: Real>(
    state: &mut PretrainState<T>,
    batch: &[TrainUtterance],
    noise_bank: &[Waveform],
    frontend: &MelFrontend,
) -> Result<StepMetrics> {
    state.step(batch, noise_bank, frontend)
}
