use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureSequence, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Log floor added before the logarithm so silence maps to a finite value.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    /// Window length in samples (20 ms).
    pub win: usize,
    /// Hop in samples (10 ms).
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            win: 320,
            hop: 160,
            n_fft: 1024,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Hann-windowed STFT magnitude pooled by triangular HTK mel filters, then `ln(x + floor)`.
pub struct MelFrontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    /// `[n_mels][n_fft / 2 + 1]`
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelFrontend {
    pub fn new(cfg: FrontendConfig) -> Self {
        let window = (0..cfg.win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / cfg.win as f64).cos())
            .collect();
        let filters = mel_filterbank(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            cfg,
            window,
            filters,
            fft,
        }
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Number of frames produced for `n` samples.
    pub fn n_frames(&self, n: usize) -> usize {
        if n < self.cfg.win {
            0
        } else {
            1 + (n - self.cfg.win) / self.cfg.hop
        }
    }

    pub fn compute(&self, w: &Waveform) -> Result<FeatureSequence> {
        let cfg = &self.cfg;
        let n = w.samples.len();
        if n < cfg.win {
            return Err(Error::invalid(
                "log_mel",
                format!("{n} samples is shorter than one {}-sample window", cfg.win),
            ));
        }
        let t = self.n_frames(n);
        let bins = cfg.n_fft / 2 + 1;
        let mut frames = Vec::with_capacity(t * cfg.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut mag = vec![0.0; bins];
        for f in 0..t {
            let start = f * cfg.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < cfg.win {
                    Complex::new(w.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            for filt in &self.filters {
                let e: f64 = filt.iter().zip(&mag).map(|(a, b)| a * b).sum();
                let v = (e + LOG_FLOOR).ln();
                frames.push(if v.is_finite() { v } else { LOG_FLOOR.ln() });
            }
        }
        FeatureSequence::new(frames, cfg.n_mels)
    }
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new(FrontendConfig::default())
    }
}

/// Triangular filters with edges equally spaced on the HTK mel scale.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Vec<Vec<f64>> {
    let bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f > l && f < c {
                        (f - l) / (c - l)
                    } else if f >= c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-mel features with the default 20 ms / 10 ms, 128-band frontend.
pub fn log_mel(w: &Waveform) -> Result<FeatureSequence> {
    MelFrontend::default().compute(w)
}
