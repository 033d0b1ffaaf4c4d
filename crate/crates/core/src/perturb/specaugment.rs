use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::audio::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MaskAxis {
    Time,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MaskFill {
    Gaussian,
    Zero,
}

/// One axis of adaptive SpecAugment: `round(p · extent)` starts, each masking `len` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub axis: MaskAxis,
    pub p: f64,
    pub len: usize,
}

impl MaskSpec {
    pub fn time(p: f64, len: usize) -> Self {
        Self {
            axis: MaskAxis::Time,
            p,
            len,
        }
    }

    pub fn frequency(p: f64, len: usize) -> Self {
        Self {
            axis: MaskAxis::Frequency,
            p,
            len,
        }
    }

    /// Time masks take unit Gaussian values, frequency masks zeros.
    pub fn fill(&self) -> MaskFill {
        match self.axis {
            MaskAxis::Time => MaskFill::Gaussian,
            MaskAxis::Frequency => MaskFill::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid("spec_augment", format!("p = {} not in [0, 1]", self.p)));
        }
        if self.len == 0 {
            return Err(Error::invalid("spec_augment", "mask length must be at least 1"));
        }
        Ok(())
    }

    /// Number of mask starts over an axis of `extent` steps.
    pub fn n_starts(&self, extent: usize) -> usize {
        ((self.p * extent as f64).round() as usize).min(extent)
    }
}

/// Which cells were masked, by start index.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MaskRecord {
    pub time_starts: Vec<usize>,
    pub time_len: usize,
    pub freq_starts: Vec<usize>,
    pub freq_len: usize,
}

impl MaskRecord {
    pub fn is_empty(&self) -> bool {
        self.time_starts.is_empty() && self.freq_starts.is_empty()
    }

    /// Per-frame flags, clipped at the end of the sequence.
    pub fn masked_frames(&self, n_frames: usize) -> Vec<bool> {
        spans(&self.time_starts, self.time_len, n_frames)
    }

    pub fn masked_bands(&self, n_mels: usize) -> Vec<bool> {
        spans(&self.freq_starts, self.freq_len, n_mels)
    }

    pub fn is_masked(&self, t: usize, m: usize, n_frames: usize, n_mels: usize) -> bool {
        self.masked_frames(n_frames)[t] || self.masked_bands(n_mels)[m]
    }
}

fn spans(starts: &[usize], len: usize, extent: usize) -> Vec<bool> {
    let mut out = vec![false; extent];
    for &s in starts {
        for flag in out.iter_mut().take((s + len).min(extent)).skip(s) {
            *flag = true;
        }
    }
    out
}

/// Adaptive SpecAugment. Start indices are drawn uniformly without replacement;
/// time-masked cells get N(0, 1) values, frequency-masked bands are zeroed.
pub fn spec_augment(
    f: &FeatureSequence,
    time: &MaskSpec,
    freq: &MaskSpec,
    rng: &mut impl Rng,
) -> Result<(FeatureSequence, MaskRecord)> {
    time.validate()?;
    freq.validate()?;
    let (t, d) = (f.n_frames(), f.n_mels());
    let mut time_starts = index::sample(rng, t, time.n_starts(t)).into_vec();
    time_starts.sort_unstable();
    let mut freq_starts = index::sample(rng, d, freq.n_starts(d)).into_vec();
    freq_starts.sort_unstable();
    let record = MaskRecord {
        time_starts,
        time_len: time.len,
        freq_starts,
        freq_len: freq.len,
    };
    let mut out = f.clone();
    let frames = record.masked_frames(t);
    let bands = record.masked_bands(d);
    let data = out.data_mut();
    for (ti, _) in frames.iter().enumerate().filter(|(_, &m)| m) {
        for v in &mut data[ti * d..(ti + 1) * d] {
            *v = StandardNormal.sample(rng);
        }
    }
    for (mi, _) in bands.iter().enumerate().filter(|(_, &m)| m) {
        for ti in 0..t {
            data[ti * d + mi] = 0.0;
        }
    }
    Ok((out, record))
}
