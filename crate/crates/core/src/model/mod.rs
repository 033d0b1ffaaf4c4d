//! The network: two conv down-sampling blocks, each followed by a Transformer with
//! convolutional relative position encoding, a projection head, an optional
//! student-only predictor, and the fine-tuning heads.

mod build;
mod config;
mod forward;
mod heads;

pub use build::{build, build_heads};
pub use config::{
    conv_out_len, ClassifierConfig, ConvStackConfig, ModelConfig, NormChoice, PredictorConfig, ProjectionHead,
    TransformerConfig,
};
pub use forward::{
    encode, sinusoid, student_forward, teacher_forward, EncodeOptions, Net, Noise, Representation, StudentOutput,
};
pub use heads::{classifier_receptive_field, upsample};

/// Closed-form parameter count (buffers excluded) of a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    build::model_specs(cfg)
        .iter()
        .filter(|s| !crate::numerics::is_buffer(&s.name))
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}
