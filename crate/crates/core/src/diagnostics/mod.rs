//! Collapse diagnostics: constant-collapse score and linear probes for position
//! and content.

mod probe;

use rand::seq::index;
use serde::Serialize;

pub use probe::{content_probe, position_bucket, position_probe, probe_accuracy, ProbeConfig};

use crate::audio::{frame_labels, FeatureSequence, FrontendConfig, Segment};
use crate::error::{Error, Result};
use crate::model::{self, EncodeOptions, ModelConfig, Noise};
use crate::numerics::{cosine_similarity, ParamSet, Real};
use crate::rng::{self, Stream};

/// Mean pairwise cosine similarity: the raw value in `[−1, 1]` and its clip to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantScore {
    pub raw: f64,
    pub clipped: f64,
}

pub fn constant_collapse_score(vectors: &[Vec<f64>]) -> Result<ConstantScore> {
    if vectors.len() < 2 {
        return Err(Error::invalid("constant_collapse_score", "need at least 2 vectors"));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sum += cosine_similarity(&vectors[i], &vectors[j]);
            pairs += 1;
        }
    }
    let raw = sum / pairs as f64;
    Ok(ConstantScore {
        raw,
        clipped: raw.clamp(0.0, 1.0),
    })
}

/// Summary of collapse indicators over a set of utterances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    pub constant_score: f64,
    pub constant_score_raw: f64,
    pub position_probe_acc: f64,
    pub position_chance: f64,
    pub content_probe_acc: f64,
    pub content_chance: f64,
    pub frames: usize,
}

/// Settings of [`collapse_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseConfig {
    pub position_buckets: usize,
    pub bucket_width: usize,
    /// Vectors sampled for the constant score (pairwise cost is quadratic).
    pub constant_sample: usize,
    pub probe: ProbeConfig,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            position_buckets: 4,
            bucket_width: 4,
            constant_sample: 400,
            probe: ProbeConfig::default(),
        }
    }
}

/// A feature sequence paired with its character alignment.
pub struct LabelledFeatures<'a> {
    pub features: &'a FeatureSequence,
    pub segments: &'a [Segment],
}

/// Runs the student (eval mode, no noise) over `data` and probes its output frames.
///
/// Content labels are the characters under each output frame; frames over silence
/// are excluded from the content probe only.
pub fn collapse_report<T: Real>(
    model_cfg: &ModelConfig,
    params: &ParamSet<T>,
    data: &[LabelledFeatures<'_>],
    frontend: &FrontendConfig,
    cfg: &DiagnoseConfig,
) -> Result<CollapseReport> {
    let mut reps = Vec::new();
    let mut index = Vec::new();
    let mut content = Vec::new();
    let mut unused = rng::stream(cfg.probe.seed, Stream::Probe, &[u64::MAX]);
    let opts = EncodeOptions::new(Noise::OFF);
    for item in data {
        let z = model::student_forward(model_cfg, params, item.features, &opts, &mut unused)?;
        let labels = frame_labels(item.segments, z.len(), model_cfg.total_stride(), frontend.hop, frontend.win);
        for (i, label) in labels.into_iter().enumerate() {
            reps.push(z.frames.row(i).iter().map(|v| v.f64()).collect::<Vec<f64>>());
            index.push(i);
            content.push(label);
        }
    }
    let n = reps.len();
    let pick = index::sample(&mut rng::stream(cfg.probe.seed, Stream::Probe, &[1]), n, cfg.constant_sample.min(n));
    let sample: Vec<Vec<f64>> = pick.iter().map(|i| reps[i].clone()).collect();
    let constant = constant_collapse_score(&sample)?;
    let position_probe_acc = position_probe(&reps, &index, cfg.position_buckets, cfg.bucket_width, &cfg.probe)?;
    let (cx, cy): (Vec<Vec<f64>>, Vec<usize>) = reps
        .iter()
        .zip(&content)
        .filter_map(|(r, l)| l.map(|l| (r.clone(), l)))
        .unzip();
    let (content_probe_acc, n_classes) = content_probe(&cx, &cy, &cfg.probe)?;
    Ok(CollapseReport {
        constant_score: constant.clipped,
        constant_score_raw: constant.raw,
        position_probe_acc,
        position_chance: 1.0 / cfg.position_buckets as f64,
        content_probe_acc,
        content_chance: 1.0 / n_classes as f64,
        frames: n,
    })
}
