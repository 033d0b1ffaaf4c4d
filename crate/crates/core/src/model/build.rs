use rand::Rng as _;

use super::config::{ClassifierConfig, ModelConfig, NormChoice, ProjectionHead};
use crate::error::Result;
use crate::numerics::{ParamSet, Real, Tensor};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

pub(crate) struct Spec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push(out: &mut Vec<Spec>, name: String, shape: Vec<usize>, init: Init) {
    out.push(Spec { name, shape, init });
}

fn conv(out: &mut Vec<Spec>, pre: &str, c_in: usize, c_out: usize, k: usize, groups: usize) {
    let fan_in = c_in / groups * k;
    push(out, format!("{pre}.weight"), vec![c_out, c_in / groups, k], Init::Uniform { fan_in });
    push(out, format!("{pre}.bias"), vec![c_out], Init::Zeros);
}

fn linear(out: &mut Vec<Spec>, pre: &str, d_in: usize, d_out: usize) {
    push(out, format!("{pre}.weight"), vec![d_in, d_out], Init::Uniform { fan_in: d_in });
    push(out, format!("{pre}.bias"), vec![d_out], Init::Zeros);
}

fn layer_norm(out: &mut Vec<Spec>, pre: &str, d: usize) {
    push(out, format!("{pre}.gamma"), vec![d], Init::Ones);
    push(out, format!("{pre}.beta"), vec![d], Init::Zeros);
}

fn batch_norm(out: &mut Vec<Spec>, pre: &str, d: usize) {
    layer_norm(out, pre, d);
    push(out, format!("{pre}.running_mean"), vec![d], Init::Zeros);
    push(out, format!("{pre}.running_var"), vec![d], Init::Ones);
}

/// Every parameter and buffer of the pre-training network, in a fixed order.
pub(crate) fn model_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let mut out = Vec::new();
    let mut c_in = cfg.n_mels;
    let blocks = [
        ("block1", &cfg.conv1, &cfg.transformer1),
        ("block2", &cfg.conv2, &cfg.transformer2),
    ];
    for (block, stack, tf) in blocks {
        for (i, (&k, &c)) in stack.kernels.iter().zip(&stack.channels).enumerate() {
            let pre = format!("encoder.{block}.conv{i}");
            conv(&mut out, &pre, c_in, c, k, 1);
            layer_norm(&mut out, &format!("{pre}.ln"), c);
            c_in = c;
        }
        let d = tf.dim;
        let pre = format!("encoder.{block}.transformer");
        conv(&mut out, &format!("{pre}.pos_conv"), d, d, cfg.pos_conv_kernel, cfg.pos_conv_groups);
        layer_norm(&mut out, &format!("{pre}.ln"), d);
        for j in 0..tf.layers {
            let lp = format!("{pre}.layer{j}");
            linear(&mut out, &format!("{lp}.attn.qkv"), d, 3 * d);
            linear(&mut out, &format!("{lp}.attn.out"), d, d);
            layer_norm(&mut out, &format!("{lp}.ln1"), d);
            linear(&mut out, &format!("{lp}.ffn.fc1"), d, tf.ffn_dim);
            linear(&mut out, &format!("{lp}.ffn.fc2"), tf.ffn_dim, d);
            layer_norm(&mut out, &format!("{lp}.ln2"), d);
        }
    }
    let d = cfg.transformer2.dim;
    match cfg.projection_head {
        ProjectionHead::Linear => linear(&mut out, "projection", d, cfg.projection_dim),
        ProjectionHead::Conv => {
            conv(&mut out, "projection.conv", d, d, cfg.projection_conv_kernel, 1);
            layer_norm(&mut out, "projection.ln", d);
            linear(&mut out, "projection.linear", d, cfg.projection_dim);
        }
    }
    let p = &cfg.predictor;
    if p.enabled {
        let mut c_in = cfg.projection_dim;
        let n = p.kernels.len();
        for i in 0..n - 1 {
            let c = p.channels[i];
            let pre = format!("predictor.conv{i}");
            conv(&mut out, &pre, c_in, c, p.kernels[i], 1);
            match p.norm {
                NormChoice::Batch => batch_norm(&mut out, &format!("{pre}.bn"), c),
                NormChoice::Layer => layer_norm(&mut out, &format!("{pre}.ln"), c),
            }
            c_in = c;
        }
        linear(&mut out, "predictor.linear", c_in, p.channels[n - 1]);
    }
    out
}

/// Fine-tuning heads on top of an encoder with output dim `d`.
pub(crate) fn head_specs(cls: &ClassifierConfig, d: usize, vocab_size: usize, upsampler: bool) -> Vec<Spec> {
    let mut out = Vec::new();
    if upsampler {
        linear(&mut out, "upsampler", d, 4 * d);
    }
    let mut c_in = d;
    for i in 0..cls.layers {
        let pre = format!("classifier.conv{i}");
        conv(&mut out, &pre, c_in, cls.channels, cls.kernel, 1);
        layer_norm(&mut out, &format!("{pre}.ln"), cls.channels);
        c_in = cls.channels;
    }
    linear(&mut out, "classifier.linear", c_in, vocab_size);
    out
}

pub(crate) fn materialize<T: Real>(specs: Vec<Spec>, seed: u64, stream: Stream) -> ParamSet<T> {
    let mut ps = ParamSet::new();
    for s in specs {
        let t = match s.init {
            Init::Zeros => Tensor::zeros(&s.shape),
            Init::Ones => Tensor::ones(&s.shape),
            Init::Uniform { fan_in } => {
                let mut r = rng::stream(seed, stream, &[rng::hash_str(&s.name)]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(&s.shape, |_| T::of(r.random_range(-bound..bound)))
            }
        };
        ps.insert(s.name, t);
    }
    ps
}

/// Deterministically initialized encoder, projection head and (if enabled) predictor.
pub fn build<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    Ok(materialize(model_specs(cfg), seed, Stream::Init))
}

/// Randomly initialized upsampler (optional) and convolutional CTC classifier.
pub fn build_heads<T: Real>(
    cls: &ClassifierConfig,
    d: usize,
    vocab_size: usize,
    upsampler: bool,
    seed: u64,
) -> Result<ParamSet<T>> {
    if cls.channels == 0 || cls.kernel % 2 == 0 || vocab_size < 2 {
        return Err(crate::error::Error::config(
            "classifier",
            "channels must be positive, kernel odd, and the vocabulary non-trivial",
        ));
    }
    Ok(materialize(head_specs(cls, d, vocab_size, upsampler), seed, Stream::Classifier))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let c = ModelConfig::tiny();
        let a: ParamSet<f32> = build(&c, 7).unwrap();
        let b: ParamSet<f32> = build(&c, 7).unwrap();
        assert_eq!(a, b);
        let d: ParamSet<f32> = build(&c, 8).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn predictor_presence_follows_flag() {
        let mut c = ModelConfig::tiny();
        let a: ParamSet<f64> = build(&c, 1).unwrap();
        assert!(a.names().any(|n| n.starts_with("predictor.")));
        c.predictor.enabled = false;
        let b: ParamSet<f64> = build(&c, 1).unwrap();
        assert!(!b.names().any(|n| n.starts_with("predictor.")));
    }

    #[test]
    fn init_ranges() {
        let ps: ParamSet<f64> = build(&ModelConfig::tiny(), 3).unwrap();
        let w = ps.get("encoder.block1.conv0.weight").unwrap();
        let bound = 1.0 / ((128 * 5) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        assert!(ps.get("encoder.block1.conv0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(ps.get("encoder.block1.conv0.ln.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(ps
            .get("predictor.conv0.bn.running_var")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }
}
