use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AudioSource, UtteranceRecord, Waveform, SAMPLE_RATE};
use crate::ctc::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Synthetic speech stand-in: one fixed-length harmonic tone per character.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Samples per character (160 ms).
    pub segment_samples: usize,
    pub base_hz: f64,
    /// Fundamental spacing between consecutive vocabulary symbols.
    pub step_hz: f64,
    pub harmonics: usize,
    pub amplitude: f64,
    pub noise_std: f64,
    /// Relative fundamental jitter per segment.
    pub jitter: f64,
    pub fade_samples: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            segment_samples: 2560,
            base_hz: 150.0,
            step_hz: 70.0,
            harmonics: 4,
            amplitude: 0.25,
            noise_std: 0.002,
            jitter: 0.015,
            fade_samples: 80,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_samples <= 2 * self.fade_samples || self.harmonics == 0 {
            return Err(Error::config(
                "synth",
                "segment must be longer than its fades and have at least one harmonic",
            ));
        }
        Ok(())
    }
}

/// Sample span of one synthesized character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    /// 0-based vocabulary character index.
    pub char_index: usize,
}

/// Fundamental assigned to vocabulary symbol `index` (0-based among characters).
pub fn char_frequency(cfg: &SynthConfig, index: usize) -> f64 {
    cfg.base_hz + cfg.step_hz * index as f64
}

/// Synthesized utterance with its ground-truth character alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub record: UtteranceRecord,
    pub segments: Vec<Segment>,
}

/// Deterministic waveform for `transcript`: each character becomes a tone complex
/// of `segment_samples` at its own fundamental, plus low-level noise.
pub fn synth_utterance(seed: u64, transcript: &str, vocab: &Vocabulary, cfg: &SynthConfig) -> Result<SynthUtterance> {
    cfg.validate()?;
    let chars: Vec<usize> = transcript
        .chars()
        .map(|c| {
            vocab
                .char_index(c)
                .ok_or_else(|| Error::Data(format!("character {c:?} not in vocabulary")))
        })
        .collect::<Result<_>>()?;
    if chars.is_empty() {
        return Err(Error::Data("empty transcript".into()));
    }
    let mut r = rng::stream(seed, Stream::Synth, &[rng::hash_str(transcript)]);
    let len = cfg.segment_samples;
    let segments: Vec<Segment> = chars
        .iter()
        .enumerate()
        .map(|(k, &ci)| Segment {
            start: k * len,
            end: (k + 1) * len,
            char_index: ci,
        })
        .collect();
    let sr = SAMPLE_RATE as f64;
    let mut samples = vec![0.0; chars.len() * len];
    for s in &segments {
        let f0 = char_frequency(cfg, s.char_index) * (1.0 + cfg.jitter * (2.0 * r.random::<f64>() - 1.0));
        let phases: Vec<f64> = (0..cfg.harmonics)
            .map(|_| r.random::<f64>() * 2.0 * std::f64::consts::PI)
            .collect();
        for n in 0..len {
            let t = n as f64 / sr;
            let mut v = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f < sr / 2.0 {
                    v += (2.0 * std::f64::consts::PI * f * t + ph).sin() / (h + 1) as f64;
                }
            }
            let edge = n.min(len - 1 - n);
            let fade = if edge < cfg.fade_samples {
                edge as f64 / cfg.fade_samples as f64
            } else {
                1.0
            };
            samples[s.start + n] = cfg.amplitude * fade * v / 2.0;
        }
    }
    for s in &mut samples {
        let z: f64 = StandardNormal.sample(&mut r);
        *s = (*s + cfg.noise_std * z).clamp(-1.0, 1.0);
    }
    let w = Waveform::new(samples);
    Ok(SynthUtterance {
        record: UtteranceRecord {
            id: format!("synth-{seed}"),
            duration_s: w.duration_s(),
            audio: AudioSource::Samples(w),
            transcript: transcript.to_string(),
        },
        segments,
    })
}

/// Random transcript of 3–12 characters: lowercase letters with single interior spaces.
pub fn random_transcript(rng: &mut impl Rng) -> String {
    let len = rng.random_range(3..=12);
    let mut out = String::with_capacity(len);
    for k in 0..len {
        let interior = k > 0 && k + 1 < len && !out.ends_with(' ');
        if interior && rng.random_bool(0.15) {
            out.push(' ');
        } else {
            out.push((b'a' + rng.random_range(0..26u8)) as char);
        }
    }
    out
}

/// `n` synthetic utterances with random transcripts; ids `utt00000`, `utt00001`, ….
pub fn synth_corpus(n: usize, seed: u64, vocab: &Vocabulary, cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    (0..n)
        .map(|i| {
            let text = random_transcript(&mut rng::stream(seed, Stream::Synth, &[u64::MAX, i as u64]));
            let mut u = synth_utterance(rng::derive_seed(seed, Stream::Synth, &[i as u64]), &text, vocab, cfg)?;
            u.record.id = format!("utt{i:05}");
            Ok(u)
        })
        .collect()
}

/// Character under the centre of each output frame's input span, or `None` over
/// silence. Output frame `j` covers input frames `[j·stride, (j+1)·stride)`.
pub fn frame_labels(
    segments: &[Segment],
    n_out_frames: usize,
    total_stride: usize,
    hop: usize,
    win: usize,
) -> Vec<Option<usize>> {
    (0..n_out_frames)
        .map(|j| {
            let centre_frame = j as f64 * total_stride as f64 + total_stride as f64 / 2.0;
            let sample = (centre_frame * hop as f64 + win as f64 / 2.0) as usize;
            segments
                .iter()
                .find(|s| s.start <= sample && sample < s.end)
                .map(|s| s.char_index)
        })
        .collect()
}

/// Writes one line per utterance: `id<TAB>start:end:char_index …`.
pub fn write_alignments(path: &Path, utts: &[SynthUtterance]) -> Result<()> {
    let mut text = String::new();
    for u in utts {
        let segs: Vec<String> = u
            .segments
            .iter()
            .map(|s| format!("{}:{}:{}", s.start, s.end, s.char_index))
            .collect();
        writeln!(text, "{}\t{}", u.record.id, segs.join(" ")).expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads an alignment file written by [`write_alignments`].
pub fn read_alignments(path: &Path) -> Result<Vec<(String, Vec<Segment>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let bad = |line: usize| Error::Data(format!("{}:{line}: malformed alignment", path.display()));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, rest) = line.split_once('\t').ok_or_else(|| bad(i + 1))?;
        let segs = rest
            .split_whitespace()
            .map(|tok| {
                let v: Vec<usize> = tok.split(':').map(|x| x.parse().map_err(|_| bad(i + 1))).collect::<Result<_>>()?;
                match v[..] {
                    [start, end, char_index] if start < end => Ok(Segment { start, end, char_index }),
                    _ => Err(bad(i + 1)),
                }
            })
            .collect::<Result<_>>()?;
        out.push((id.to_string(), segs));
    }
    Ok(out)
}
