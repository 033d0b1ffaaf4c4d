//! Audio ingestion, log-mel features and the synthetic utterance generator.

mod manifest;
mod mel;
mod synth;
mod wav;

pub use manifest::{read_manifest, write_manifest, AudioSource, UtteranceRecord};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, FrontendConfig, MelFrontend, LOG_FLOOR};
pub use synth::{
    char_frequency, frame_labels, random_transcript, read_alignments, synth_corpus, synth_utterance, write_alignments,
    Segment, SynthConfig, SynthUtterance,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const SAMPLE_RATE: u32 = 16000;

/// Mono audio at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per-utterance feature matrix `[T × n_mels]`, 10 ms frame shift, 20 ms frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f64>,
    n_mels: usize,
    pub frame_shift_ms: f64,
    pub frame_len_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f64>, n_mels: usize) -> Result<Self> {
        if n_mels == 0 || frames.len() % n_mels != 0 {
            return Err(Error::shape(
                "features",
                format!("{} values do not split into {n_mels}-wide frames", frames.len()),
            ));
        }
        Ok(Self {
            frames,
            n_mels,
            frame_shift_ms: 10.0,
            frame_len_ms: 20.0,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.n_mels
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.frames[t * self.n_mels + m]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.n_frames(), self.n_mels],
            self.frames.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("frames divide evenly")
    }
}

/// Per-utterance, per-band standardization: zero mean and unit variance
/// (`eps`-guarded, so constant bands become zeros).
pub fn normalize(f: &FeatureSequence) -> FeatureSequence {
    const EPS: f64 = 1e-10;
    let (t, d) = (f.n_frames(), f.n_mels());
    let mut out = f.clone();
    for m in 0..d {
        let mean = (0..t).map(|i| f.get(i, m)).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (f.get(i, m) - mean).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / (var + EPS).sqrt();
        for i in 0..t {
            out.frames[i * d + m] = (f.get(i, m) - mean) * inv;
        }
    }
    out
}

/// Clean model input for a waveform: log-mel then per-utterance normalization.
pub fn features(frontend: &MelFrontend, w: &Waveform) -> Result<FeatureSequence> {
    Ok(normalize(&frontend.compute(w)?))
}
