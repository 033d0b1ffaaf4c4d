//! Input perturbations: adaptive SpecAugment, additive noise at a target SNR, and
//! stride-aligned position randomization of the teacher input.

mod noise;
mod position;
mod specaugment;

pub use noise::{maybe_mix, mix_noise, synth_noise_bank, Mixed, NoiseMixConfig};
pub use position::{pad, randomize_position, Padding, PositionRandomization};
pub use specaugment::{spec_augment, MaskAxis, MaskFill, MaskRecord, MaskSpec};
