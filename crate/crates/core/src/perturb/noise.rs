use rand::Rng;

use crate::audio::{rms, Waveform};
use crate::error::{Error, Result};

/// Multi-condition training: additive noise applied with probability `apply_prob`
/// at an SNR drawn uniformly from `snr_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMixConfig {
    pub apply_prob: f64,
    pub snr_db: (f64, f64),
}

impl Default for NoiseMixConfig {
    fn default() -> Self {
        Self {
            apply_prob: 0.5,
            snr_db: (0.0, 30.0),
        }
    }
}

impl NoiseMixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::invalid("noise", "apply_prob must be in [0, 1]"));
        }
        if self.snr_db.0 > self.snr_db.1 {
            return Err(Error::invalid("noise", "SNR range lower bound exceeds upper bound"));
        }
        Ok(())
    }
}

/// Result of a mix: the noisy waveform plus what was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub waveform: Waveform,
    pub snr_db: Option<f64>,
    pub gain: f64,
}

/// Tiles `noise` from a random circular offset to `len` samples.
fn fit_noise(noise: &[f64], len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let offset = rng.random_range(0..noise.len());
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Adds `noise` to `speech` at exactly `snr_db` (20·log10 of the RMS ratio).
///
/// An infinite SNR returns the speech unchanged.
pub fn mix_noise(speech: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut impl Rng) -> Result<Mixed> {
    if snr_db == f64::INFINITY {
        return Ok(Mixed {
            waveform: speech.clone(),
            snr_db: None,
            gain: 0.0,
        });
    }
    let rs = speech.rms();
    if rs <= 0.0 {
        return Err(Error::Data("cannot mix noise into silent speech".into()));
    }
    if noise.is_empty() || noise.rms() <= 0.0 {
        return Err(Error::Data("noise clip is silent".into()));
    }
    let fitted = fit_noise(&noise.samples, speech.len(), rng);
    let rn = rms(&fitted);
    if rn <= 0.0 {
        return Err(Error::Data("noise segment is silent".into()));
    }
    let gain = rs / (rn * 10f64.powf(snr_db / 20.0));
    let samples = speech
        .samples
        .iter()
        .zip(&fitted)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(Mixed {
        waveform: Waveform::new(samples),
        snr_db: Some(snr_db),
        gain,
    })
}

/// With probability `apply_prob`, mixes a uniformly chosen clip from `bank` at a
/// uniformly drawn SNR; otherwise returns the speech unchanged.
pub fn maybe_mix(speech: &Waveform, cfg: &NoiseMixConfig, bank: &[Waveform], rng: &mut impl Rng) -> Result<Mixed> {
    cfg.validate()?;
    if cfg.apply_prob > 0.0 && bank.is_empty() {
        return Err(Error::Data("noise mixing enabled with an empty noise source".into()));
    }
    if rng.random::<f64>() >= cfg.apply_prob {
        return mix_noise(speech, &Waveform::new(vec![]), f64::INFINITY, rng);
    }
    let (lo, hi) = cfg.snr_db;
    let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let clip = &bank[rng.random_range(0..bank.len())];
    mix_noise(speech, clip, snr, rng)
}

/// Synthetic stand-in for a noise corpus: coloured noise clips of several kinds.
pub fn synth_noise_bank(seed: u64, n: usize, len: usize) -> Vec<Waveform> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|i| {
            let mut r = crate::rng::stream(seed, crate::rng::Stream::Noise, &[u64::MAX, i as u64]);
            let kind = i % 3;
            let mut prev = 0.0;
            let mut phase = 0.0f64;
            let hum = 50.0 + 40.0 * r.random::<f64>();
            let s = (0..len)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    match kind {
                        0 => 0.1 * z,
                        1 => {
                            prev = 0.97 * prev + 0.03 * z;
                            prev
                        }
                        _ => {
                            phase += 2.0 * std::f64::consts::PI * hum * (1 + k % 3) as f64 / 16000.0;
                            0.05 * phase.sin() + 0.02 * z
                        }
                    }
                })
                .collect();
            Waveform::new(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn tone(len: usize, amp: f64, f: f64) -> Waveform {
        Waveform::new((0..len).map(|i| amp * (i as f64 * f).sin()).collect())
    }

    #[test]
    fn equal_rms_at_zero_db_has_unit_gain() {
        let s = Waveform::new(vec![0.5, -0.5, 0.5, -0.5]);
        let n = Waveform::new(vec![-0.5, 0.5]);
        let m = mix_noise(&s, &n, 0.0, &mut stream(1, Stream::Noise, &[])).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_formula() {
        let s = Waveform::new(vec![0.2, -0.2]);
        let n = Waveform::new(vec![0.05, -0.05]);
        let m = mix_noise(&s, &n, 20.0, &mut stream(1, Stream::Noise, &[])).unwrap();
        assert!((m.gain - 0.4).abs() < 1e-12);
    }

    #[test]
    fn infinite_snr_and_zero_probability_are_identity() {
        let s = tone(100, 0.3, 0.1);
        let n = tone(30, 0.1, 0.7);
        let mut r = stream(3, Stream::Noise, &[]);
        assert_eq!(mix_noise(&s, &n, f64::INFINITY, &mut r).unwrap().waveform, s);
        let cfg = NoiseMixConfig {
            apply_prob: 0.0,
            snr_db: (0.0, 30.0),
        };
        for _ in 0..50 {
            assert_eq!(maybe_mix(&s, &cfg, &[n.clone()], &mut r).unwrap().waveform, s);
        }
    }

    #[test]
    fn silent_noise_and_empty_bank_are_errors() {
        let s = tone(100, 0.3, 0.1);
        let mut r = stream(4, Stream::Noise, &[]);
        assert!(mix_noise(&s, &Waveform::new(vec![0.0; 10]), 5.0, &mut r).is_err());
        assert!(maybe_mix(&s, &NoiseMixConfig::default(), &[], &mut r).is_err());
    }

    #[test]
    fn degenerate_range_hits_target() {
        let s = tone(4000, 0.3, 0.05);
        let bank = synth_noise_bank(9, 3, 1000);
        let cfg = NoiseMixConfig {
            apply_prob: 1.0,
            snr_db: (10.0, 10.0),
        };
        let mut r = stream(5, Stream::Noise, &[]);
        for _ in 0..20 {
            let m = maybe_mix(&s, &cfg, &bank, &mut r).unwrap();
            let noise: Vec<f64> = m.waveform.samples.iter().zip(&s.samples).map(|(a, b)| a - b).collect();
            let snr = 20.0 * (s.rms() / rms(&noise)).log10();
            assert!((snr - 10.0).abs() < 0.01, "{snr}");
        }
    }
}
