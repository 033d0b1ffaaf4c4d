//! Command implementations behind the `spiral` binary: corpus synthesis,
//! pre-training, fine-tuning, evaluation, diagnostics and augmentation dumps.

mod io;

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

pub use io::{load_noise_bank, load_utterances, MetricsLog, OutputDir};

use crate::audio::{self, read_alignments, write_alignments, write_wav, AudioSource, MelFrontend};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, TEACHER_PREFIX};
use crate::config::{Config, Precision};
use crate::ctc::{EvalReport, FinetuneState, LabelledUtterance, Vocabulary};
use crate::diagnostics::{collapse_report, CollapseReport, LabelledFeatures};
use crate::error::{Error, Result};
use crate::model;
use crate::numerics::{ParamSet, Real};
use crate::perturb;
use crate::rng::{self, Stream};
use crate::spiral::{batch_indices, PretrainState, TrainUtterance};

/// Writes `n` synthetic utterances under `out/wav`, plus `manifest.tsv` and
/// `alignments.tsv`. Returns the manifest path.
pub fn synth_corpus(cfg: &Config, n: usize, out: &Path) -> Result<PathBuf> {
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    let dir = OutputDir::lock(out)?;
    let vocab = Vocabulary::characters();
    let wav_dir = dir.path().join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let mut utts = audio::synth_corpus(n, cfg.seed, &vocab, &cfg.synth)?;
    for u in &mut utts {
        let path = wav_dir.join(format!("{}.wav", u.record.id));
        if let AudioSource::Samples(w) = &u.record.audio {
            write_wav(&path, w)?;
        }
        u.record.audio = AudioSource::Path(path);
    }
    let records: Vec<_> = utts.iter().map(|u| u.record.clone()).collect();
    let manifest = dir.path().join("manifest.tsv");
    audio::write_manifest(&manifest, &records, dir.path())?;
    write_alignments(&dir.path().join("alignments.tsv"), &utts)?;
    dir.write_run_json("synth-corpus", cfg, json!({ "n": n }))?;
    Ok(manifest)
}

fn split_heldout<U: Clone>(items: &[U], frac: f64) -> (Vec<U>, Vec<U>) {
    let n_held = ((items.len() as f64 * frac).round() as usize).min(items.len().saturating_sub(1));
    let (train, held) = items.split_at(items.len() - n_held);
    (train.to_vec(), held.to_vec())
}

/// Outcome of a pre-training run.
#[derive(Debug, Clone, Serialize)]
pub struct PretrainSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Pre-trains from scratch on `data`, writing metrics and checkpoints under `out`.
pub fn pretrain(cfg: &Config, data: &Path, noise: Option<&Path>, out: &Path) -> Result<PretrainSummary> {
    match cfg.precision {
        Precision::F32 => pretrain_impl::<f32>(cfg, data, noise, out),
        Precision::F64 => pretrain_impl::<f64>(cfg, data, noise, out),
    }
}

fn pretrain_impl<T: Real>(cfg: &Config, data: &Path, noise: Option<&Path>, out: &Path) -> Result<PretrainSummary> {
    let dir = OutputDir::lock(out)?;
    let frontend = MelFrontend::new(cfg.frontend.clone());
    let utts: Vec<TrainUtterance> = load_utterances(data)?
        .into_iter()
        .map(|(r, w)| TrainUtterance::new(&r.id, w, &frontend))
        .collect::<Result<_>>()?;
    let bank = if cfg.pretrain.use_mct { load_noise_bank(cfg, noise)? } else { Vec::new() };
    let (train, held) = split_heldout(&utts, cfg.run.heldout_frac);
    dir.write_run_json(
        "pretrain",
        cfg,
        json!({ "data": data, "noise": noise, "train": train.len(), "heldout": held.len() }),
    )?;
    let mut state = PretrainState::<T>::new(cfg.model.clone(), cfg.pretrain.clone(), cfg.seed)?;
    let mut log = MetricsLog::create(&dir.path().join("metrics.jsonl"))?;
    let total = cfg.pretrain.steps;
    let mut last = None;
    let mut eval = None;
    for s in 0..total {
        let batch: Vec<TrainUtterance> = batch_indices(cfg.seed, s, train.len(), cfg.pretrain.batch_size)
            .into_iter()
            .map(|i| train[i].clone())
            .collect();
        let m = state.step(&batch, &bank, &frontend).inspect_err(|e| log::error!("{e}"))?;
        last = Some(m.loss);
        if m.step % cfg.run.log_every == 0 || m.step == total {
            log.write(&m)?;
            log::info!("step {} loss {:.4} acc {:.3} lr {:.2e}", m.step, m.loss, m.accuracy, m.lr);
        }
        if !held.is_empty() && (m.step == total || (cfg.run.eval_every > 0 && m.step % cfg.run.eval_every == 0)) {
            let (loss, acc) = state.evaluate(&held)?;
            log.write(&json!({ "step": m.step, "eval_loss": loss, "eval_accuracy": acc }))?;
            log::info!("step {} held-out loss {loss:.4} accuracy {acc:.3}", m.step);
            eval = Some((loss, acc));
        }
        if cfg.run.checkpoint_every > 0 && m.step % cfg.run.checkpoint_every == 0 && m.step != total {
            save_checkpoint(&dir.path().join(format!("step-{:06}.ckpt", m.step)), &pretrain_checkpoint(cfg, &state))?;
        }
    }
    let path = dir.path().join("final.ckpt");
    save_checkpoint(&path, &pretrain_checkpoint(cfg, &state))?;
    Ok(PretrainSummary {
        steps: state.step,
        final_loss: last.unwrap_or(f64::NAN),
        eval_loss: eval.map(|e| e.0),
        eval_accuracy: eval.map(|e| e.1),
        checkpoint: path,
    })
}

/// Student entries as-is plus teacher entries under [`TEACHER_PREFIX`].
pub fn pretrain_checkpoint<T: Real>(cfg: &Config, state: &PretrainState<T>) -> Checkpoint<T> {
    let mut tensors = state.student.clone();
    for (name, t) in state.teacher.iter() {
        tensors.insert(format!("{TEACHER_PREFIX}{name}"), t.clone());
    }
    Checkpoint::new(CheckpointKind::Pretrain, state.step, cfg, tensors)
}

/// Student parameters of a pre-training checkpoint.
pub fn student_params<T: Real>(ckpt: &Checkpoint<T>) -> Result<ParamSet<T>> {
    if ckpt.kind != CheckpointKind::Pretrain {
        return Err(Error::Data("expected a pre-training checkpoint".into()));
    }
    Ok(ckpt.tensors.without_prefix(TEACHER_PREFIX))
}

fn labelled(data: &Path, vocab: &Vocabulary, frontend: &MelFrontend) -> Result<Vec<LabelledUtterance>> {
    load_utterances(data)?
        .into_iter()
        .map(|(r, w)| {
            if r.transcript.trim().is_empty() {
                return Err(Error::Data(format!("utterance `{}` has no transcript", r.id)));
            }
            LabelledUtterance::new(&r.id, &r.transcript, w, vocab, frontend)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub heldout_cer: Option<f64>,
    pub heldout_wer: Option<f64>,
    pub checkpoint: PathBuf,
}

/// CTC fine-tuning from the student encoder in `init`, or from a random encoder
/// when `init` is `None`.
pub fn finetune(cfg: &Config, init: Option<&Path>, data: &Path, noise: Option<&Path>, out: &Path) -> Result<FinetuneSummary> {
    match cfg.precision {
        Precision::F32 => finetune_impl::<f32>(cfg, init, data, noise, out),
        Precision::F64 => finetune_impl::<f64>(cfg, init, data, noise, out),
    }
}

fn finetune_impl<T: Real>(
    cfg: &Config,
    init: Option<&Path>,
    data: &Path,
    noise: Option<&Path>,
    out: &Path,
) -> Result<FinetuneSummary> {
    let encoder: ParamSet<T> = match init {
        Some(p) => {
            let ckpt = load_checkpoint::<T>(p)?;
            ckpt.check_architecture(cfg)?;
            match ckpt.kind {
                CheckpointKind::Pretrain => student_params(&ckpt)?,
                CheckpointKind::Finetune => ckpt.tensors,
            }
        }
        None => model::build(&cfg.model, cfg.seed)?,
    };
    let dir = OutputDir::lock(out)?;
    let frontend = MelFrontend::new(cfg.frontend.clone());
    let vocab = Vocabulary::characters();
    let items = labelled(data, &vocab, &frontend)?;
    let bank = if cfg.finetune.use_mct { load_noise_bank(cfg, noise)? } else { Vec::new() };
    let (train, held) = split_heldout(&items, cfg.run.heldout_frac);
    dir.write_run_json(
        "finetune",
        cfg,
        json!({ "init": init, "data": data, "noise": noise, "train": train.len(), "heldout": held.len() }),
    )?;
    let mut state = FinetuneState::new(cfg.model.clone(), cfg.finetune.clone(), vocab, &encoder, cfg.seed)?;
    let mut log = MetricsLog::create(&dir.path().join("metrics.jsonl"))?;
    let total = cfg.finetune.steps;
    let (mut last, mut eval) = (None, None);
    for s in 0..total {
        let batch: Vec<LabelledUtterance> = batch_indices(cfg.seed, s, train.len(), cfg.finetune.batch_size)
            .into_iter()
            .map(|i| train[i].clone())
            .collect();
        let m = state.step(&batch, &bank, &frontend).inspect_err(|e| log::error!("{e}"))?;
        last = Some(m.loss);
        if m.step % cfg.run.log_every == 0 || m.step == total {
            log.write(&m)?;
            log::info!("step {} ctc loss {:.4} lr {:.2e}", m.step, m.loss, m.lr);
        }
        if !held.is_empty() && (m.step == total || (cfg.run.eval_every > 0 && m.step % cfg.run.eval_every == 0)) {
            let r = state.evaluate(&held)?;
            log.write(&json!({ "step": m.step, "heldout_wer": r.wer, "heldout_cer": r.cer }))?;
            log::info!("step {} held-out WER {:.3} CER {:.3}", m.step, r.wer, r.cer);
            eval = Some((r.wer, r.cer));
        }
        if cfg.run.checkpoint_every > 0 && m.step % cfg.run.checkpoint_every == 0 && m.step != total {
            let c = Checkpoint::new(CheckpointKind::Finetune, m.step, cfg, state.params.clone());
            save_checkpoint(&dir.path().join(format!("step-{:06}.ckpt", m.step)), &c)?;
        }
    }
    let path = dir.path().join("final.ckpt");
    save_checkpoint(&path, &Checkpoint::new(CheckpointKind::Finetune, state.step, cfg, state.params.clone()))?;
    Ok(FinetuneSummary {
        steps: state.step,
        final_loss: last.unwrap_or(f64::NAN),
        heldout_wer: eval.map(|e| e.0),
        heldout_cer: eval.map(|e| e.1),
        checkpoint: path,
    })
}

/// Greedy-decodes `data` with a fine-tuned checkpoint; writes one JSON line per
/// utterance to `out` followed by a summary line.
pub fn eval(ckpt_path: &Path, data: &Path, out: &Path) -> Result<EvalReport> {
    let ckpt = load_checkpoint::<f64>(ckpt_path)?;
    if ckpt.kind != CheckpointKind::Finetune {
        return Err(Error::Data(format!("{}: expected a fine-tuning checkpoint", ckpt_path.display())));
    }
    let cfg = ckpt.config()?;
    match cfg.precision {
        Precision::F32 => eval_impl(&cfg, &load_checkpoint::<f32>(ckpt_path)?.tensors, data, out),
        Precision::F64 => eval_impl(&cfg, &ckpt.tensors, data, out),
    }
}

fn eval_impl<T: Real>(cfg: &Config, params: &ParamSet<T>, data: &Path, out: &Path) -> Result<EvalReport> {
    let frontend = MelFrontend::new(cfg.frontend.clone());
    let vocab = Vocabulary::characters();
    let items = labelled(data, &vocab, &frontend)?;
    let report = crate::ctc::evaluate(&cfg.model, params, &cfg.finetune, &vocab, &items)?;
    let mut log = MetricsLog::create(out)?;
    for u in &report.utterances {
        log.write(u)?;
    }
    log.write(&json!({ "wer": report.wer, "cer": report.cer, "utterances": report.utterances.len() }))?;
    Ok(report)
}

/// Collapse diagnostics of a pre-training checkpoint's student on `data`, whose
/// alignments come from `align` (default: `alignments.tsv` beside the manifest).
pub fn diagnose(ckpt_path: &Path, data: &Path, align: Option<&Path>, out: &Path) -> Result<CollapseReport> {
    let ckpt = load_checkpoint::<f64>(ckpt_path)?;
    let cfg = ckpt.config()?;
    let student = student_params(&ckpt)?;
    let frontend = MelFrontend::new(cfg.frontend.clone());
    let default_align = data.parent().unwrap_or(Path::new(".")).join("alignments.tsv");
    let align_path = align.unwrap_or(&default_align);
    let alignments = read_alignments(align_path)?;
    let utts = load_utterances(data)?;
    let mut feats = Vec::with_capacity(utts.len());
    let mut segs = Vec::with_capacity(utts.len());
    for (r, w) in utts {
        let (_, s) = alignments
            .iter()
            .find(|(id, _)| *id == r.id)
            .ok_or_else(|| Error::Data(format!("no alignment for `{}` in {}", r.id, align_path.display())))?;
        feats.push(audio::features(&frontend, &w)?);
        segs.push(s.clone());
    }
    let items: Vec<LabelledFeatures<'_>> = feats
        .iter()
        .zip(&segs)
        .map(|(features, segments)| LabelledFeatures { features, segments })
        .collect();
    let report = match cfg.precision {
        Precision::F32 => collapse_report(&cfg.model, &student.cast::<f32>(), &items, &cfg.frontend, &cfg.diagnose)?,
        Precision::F64 => collapse_report(&cfg.model, &student, &items, &cfg.frontend, &cfg.diagnose)?,
    };
    std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct AugmentRecord<'a> {
    id: &'a str,
    snr_db: Option<f64>,
    masks: perturb::MaskRecord,
    n_frames: usize,
    n_mels: usize,
    features: Vec<f64>,
}

/// Applies the pre-training student perturbations (noise mixing when enabled, then
/// SpecAugment) to every utterance and writes the perturbed features as JSON lines.
pub fn augment(cfg: &Config, data: &Path, noise: Option<&Path>, out: &Path) -> Result<usize> {
    let dir = OutputDir::lock(out)?;
    let frontend = MelFrontend::new(cfg.frontend.clone());
    let bank = if cfg.pretrain.use_mct { load_noise_bank(cfg, noise)? } else { Vec::new() };
    dir.write_run_json("augment", cfg, json!({ "data": data, "noise": noise }))?;
    let mut log = MetricsLog::create(&dir.path().join("features.jsonl"))?;
    let utts = load_utterances(data)?;
    for (r, w) in &utts {
        let key = rng::hash_str(&r.id);
        let (wave, snr) = if cfg.pretrain.use_mct {
            let m = perturb::maybe_mix(w, &cfg.pretrain.mct, &bank, &mut rng::stream(cfg.seed, Stream::Noise, &[0, key]))?;
            (m.waveform, m.snr_db)
        } else {
            (w.clone(), None)
        };
        let f = audio::features(&frontend, &wave)?;
        let (f, masks) = if cfg.pretrain.specaugment {
            let mut rm = rng::stream(cfg.seed, Stream::Mask, &[0, key]);
            perturb::spec_augment(&f, &cfg.pretrain.time_mask, &cfg.pretrain.freq_mask, &mut rm)?
        } else {
            (f, perturb::MaskRecord::default())
        };
        log.write(&AugmentRecord {
            id: &r.id,
            snr_db: snr,
            masks,
            n_frames: f.n_frames(),
            n_mels: f.n_mels(),
            features: f.data().to_vec(),
        })?;
    }
    Ok(utts.len())
}
