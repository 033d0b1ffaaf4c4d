use rand::Rng;

use crate::audio::FeatureSequence;
use crate::error::{Error, Result};

/// Stride-aligned random padding of the teacher input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionRandomization {
    pub max_pad_frames: usize,
    pub total_stride: usize,
}

impl PositionRandomization {
    pub fn validate(&self) -> Result<()> {
        if self.total_stride == 0 || self.max_pad_frames % self.total_stride != 0 {
            return Err(Error::invalid(
                "randomize_position",
                format!(
                    "max_pad_frames {} must be a multiple of the total stride {}",
                    self.max_pad_frames, self.total_stride
                ),
            ));
        }
        Ok(())
    }
}

/// Padding applied to one utterance, in input frames and in output frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
    pub offset_out: usize,
    pub trailing_out: usize,
}

impl Padding {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(left: usize, right: usize, total_stride: usize) -> Self {
        Self {
            left,
            right,
            offset_out: left / total_stride,
            trailing_out: right / total_stride,
        }
    }
}

/// Prepends and appends zero frames, each count drawn uniformly from the multiples of
/// `total_stride` in `[0, max_pad_frames]`.
pub fn randomize_position(
    f: &FeatureSequence,
    pr: &PositionRandomization,
    rng: &mut impl Rng,
) -> Result<(FeatureSequence, Padding)> {
    pr.validate()?;
    let choices = pr.max_pad_frames / pr.total_stride;
    let left = rng.random_range(0..=choices) * pr.total_stride;
    let right = rng.random_range(0..=choices) * pr.total_stride;
    let padding = Padding::new(left, right, pr.total_stride);
    Ok((pad(f, padding), padding))
}

/// Applies a fixed padding.
pub fn pad(f: &FeatureSequence, p: Padding) -> FeatureSequence {
    if p.left == 0 && p.right == 0 {
        return f.clone();
    }
    let d = f.n_mels();
    let mut data = vec![0.0; p.left * d];
    data.extend_from_slice(f.data());
    data.extend(std::iter::repeat(0.0).take(p.right * d));
    let mut out = FeatureSequence::new(data, d).expect("whole frames");
    out.frame_shift_ms = f.frame_shift_ms;
    out.frame_len_ms = f.frame_len_ms;
    out
}
