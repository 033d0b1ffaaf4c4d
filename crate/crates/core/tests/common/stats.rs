use rand::Rng;
use rand_distr::StandardNormal;
use spiral_core::audio::{rms, FeatureSequence, Waveform};
use spiral_core::numerics::Tensor;
use spiral_core::perturb::{mix_noise, spec_augment, synth_noise_bank, MaskSpec};
use spiral_core::spiral::{contrastive_loss, ContrastiveConfig};

use super::{randn, rng};

/// Worst |measured − target| SNR in dB over `n` mixes at targets uniform in [0, 30].
pub fn snr_max_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let bank = synth_noise_bank(seed, 6, 8000);
    (0..n)
        .map(|i| {
            let len = r.random_range(400..6000);
            let amp = 10f64.powf(r.random_range(-3.0..0.0));
            let speech = Waveform::new((0..len).map(|_| amp * r.sample::<f64, _>(StandardNormal)).collect());
            let target = r.random_range(0.0..=30.0);
            let m = mix_noise(&speech, &bank[i % bank.len()], target, &mut r).unwrap();
            let noise: Vec<f64> = m.waveform.samples.iter().zip(&speech.samples).map(|(y, s)| y - s).collect();
            let measured = 20.0 * (speech.rms() / rms(&noise)).log10();
            (measured - target).abs()
        })
        .fold(0.0, f64::max)
}

/// Outcome of repeated SpecAugment draws on a `T × 8` input.
pub struct MaskStats {
    /// Draws whose number of time-mask starts differed from `round(p·T)`.
    pub wrong_counts: usize,
    pub masked_fraction: f64,
}

pub fn spec_augment_stats(t: usize, p: f64, len: usize, draws: usize, seed: u64) -> MaskStats {
    let f = FeatureSequence::new(vec![1.0; t * 8], 8).unwrap();
    let spec = MaskSpec::time(p, len);
    let expected = (p * t as f64).round() as usize;
    let mut r = rng(seed);
    let (mut wrong, mut masked) = (0, 0usize);
    for _ in 0..draws {
        let (out, rec) = spec_augment(&f, &spec, &MaskSpec::frequency(0.0, 1), &mut r).unwrap();
        if rec.time_starts.len() != expected {
            wrong += 1;
        }
        masked += (0..t).filter(|&i| out.frame(i).iter().any(|&v| v != 1.0)).count();
    }
    MaskStats {
        wrong_counts: wrong,
        masked_fraction: masked as f64 / (draws * t) as f64,
    }
}

/// Monte Carlo oracle of the masked fraction: `round(p·T)` distinct starts drawn by
/// a partial Fisher–Yates shuffle, each covering `len` frames clipped at `T`.
pub fn masked_fraction_oracle(t: usize, p: f64, len: usize, draws: usize, seed: u64) -> f64 {
    let k = (p * t as f64).round() as usize;
    let mut r = rng(seed);
    let mut masked = 0usize;
    let mut idx: Vec<usize> = (0..t).collect();
    for _ in 0..draws {
        for i in 0..k {
            let j = r.random_range(i..t);
            idx.swap(i, j);
        }
        let mut cover = vec![false; t];
        for &s in &idx[..k] {
            cover[s..(s + len).min(t)].iter_mut().for_each(|c| *c = true);
        }
        masked += cover.iter().filter(|&&c| c).count();
    }
    masked as f64 / (draws * t) as f64
}

/// Exact expected masked fraction: frame `j` escapes iff none of the `k` starts lies
/// in its window `[j − len + 1, j]`, a hypergeometric event.
pub fn masked_fraction_exact(t: usize, p: f64, len: usize) -> f64 {
    let k = (p * t as f64).round() as usize;
    let escape = |w: usize| -> f64 { (0..k).map(|i| (t - w - i) as f64 / (t - i) as f64).product() };
    (0..t).map(|j| 1.0 - escape((j + 1).min(len))).sum::<f64>() / t as f64
}

/// Mean contrastive accuracy over `trials` independent Gaussian `Z`, `Z′` of
/// `frames × dim`, and the number of scored positions.
pub fn contrastive_chance(trials: usize, frames: usize, dim: usize, cfg: &ContrastiveConfig, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut acc = 0.0;
    for i in 0..trials {
        let z = randn(&[frames, dim], seed.wrapping_mul(31).wrapping_add(2 * i as u64));
        let zp = randn(&[frames, dim], seed.wrapping_mul(31).wrapping_add(2 * i as u64 + 1));
        acc += contrastive_loss(&z, &zp, cfg, &mut r).unwrap().1;
    }
    (acc / trials as f64, trials * frames)
}

/// Two orthonormal frames as both student and teacher.
pub fn orthogonal_pair() -> Tensor<f64> {
    Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()
}
