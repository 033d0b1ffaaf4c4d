use rand::Rng;

use super::config::{ConvStackConfig, ModelConfig, NormChoice, ProjectionHead, TransformerConfig};
use crate::audio::FeatureSequence;
use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, Mode, NormStats, ParamSet, Real, Tensor, Var};
use crate::perturb::Padding;

/// Which stochastic layers are active during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Noise {
    pub dropout: bool,
    pub layerdrop: bool,
}

impl Noise {
    pub const OFF: Noise = Noise {
        dropout: false,
        layerdrop: false,
    };
    pub const ON: Noise = Noise {
        dropout: true,
        layerdrop: true,
    };
}

/// Options of one encoder pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub noise: Noise,
    /// Amplitude of a fixed sinusoidal absolute-position signal added to every
    /// Transformer input. Zero in normal operation.
    pub position_signal: f64,
}

impl EncodeOptions {
    pub fn new(noise: Noise) -> Self {
        Self {
            noise,
            position_signal: 0.0,
        }
    }
}

/// Encoder output frames with their frame period.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation<T> {
    pub frames: Tensor<T>,
    pub frame_rate_ms: f64,
}

impl<T: Real> Representation<T> {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Student output: representations plus batch statistics of every predictor
/// batch-norm layer (train mode only), keyed by layer prefix.
pub struct StudentOutput<T> {
    pub z: Var,
    pub bn_stats: Vec<(String, NormStats<T>)>,
}

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(…)`, scaled by `amp`.
pub fn sinusoid<T: Real>(t: usize, d: usize, amp: f64) -> Tensor<T> {
    Tensor::from_fn(&[t, d], |idx| {
        let (pos, j) = (idx / d, idx % d);
        let rate = 10000f64.powf((j - j % 2) as f64 / d as f64);
        let a = pos as f64 / rate;
        T::of(amp * if j % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Parameters bound onto one graph together with the configuration they follow.
pub struct Net<'a, T> {
    pub cfg: &'a ModelConfig,
    params: &'a ParamSet<T>,
    bound: Bound,
}

impl<'a, T: Real> Net<'a, T> {
    /// Binds `params`; names for which `trainable` holds become gradient leaves.
    pub fn bind(
        cfg: &'a ModelConfig,
        params: &'a ParamSet<T>,
        g: &mut Graph<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> Self {
        let bound = params.bind(g, trainable);
        Self { cfg, params, bound }
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        self.bound.get(name)
    }

    fn mode(on: bool) -> Mode {
        if on {
            Mode::Train
        } else {
            Mode::Eval
        }
    }

    /// Same-length conv of a time-major `[T, C]` input, returning `[T′, C′]`.
    pub fn conv_tm(&self, g: &mut Graph<T>, x: Var, pre: &str, stride: usize, groups: usize) -> Result<Var> {
        let w = self.p(&format!("{pre}.weight"))?;
        let b = self.p(&format!("{pre}.bias"))?;
        let k = g.shape(w)[2];
        let xt = g.transpose(x)?;
        let y = g.conv1d(xt, w, Some(b), stride, (k - 1) / 2, groups)?;
        g.transpose(y)
    }

    pub fn linear(&self, g: &mut Graph<T>, x: Var, pre: &str) -> Result<Var> {
        let w = self.p(&format!("{pre}.weight"))?;
        let b = self.p(&format!("{pre}.bias"))?;
        g.linear(x, w, b)
    }

    pub fn layer_norm(&self, g: &mut Graph<T>, x: Var, pre: &str) -> Result<Var> {
        let gamma = self.p(&format!("{pre}.gamma"))?;
        let beta = self.p(&format!("{pre}.beta"))?;
        g.layer_norm(x, gamma, beta, self.cfg.ln_eps)
    }

    /// Conv → layer norm → ReLU.
    pub fn conv_ln_relu(&self, g: &mut Graph<T>, x: Var, pre: &str, stride: usize) -> Result<Var> {
        let h = self.conv_tm(g, x, pre, stride, 1)?;
        let h = self.layer_norm(g, h, &format!("{pre}.ln"))?;
        Ok(g.relu(h))
    }

    fn conv_stack(&self, g: &mut Graph<T>, x: Var, block: &str, stack: &ConvStackConfig) -> Result<Var> {
        let mut h = x;
        for (i, &s) in stack.strides.iter().enumerate() {
            h = self.conv_ln_relu(g, h, &format!("encoder.{block}.conv{i}"), s)?;
        }
        Ok(h)
    }

    fn transformer(
        &self,
        g: &mut Graph<T>,
        x: Var,
        block: &str,
        tf: &TransformerConfig,
        opts: &EncodeOptions,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let pre = format!("encoder.{block}.transformer");
        let drop = Self::mode(opts.noise.dropout);
        let rate = self.cfg.dropout;
        let mut h = x;
        if opts.position_signal > 0.0 {
            let (t, d) = (g.shape(h)[0], g.shape(h)[1]);
            let pe = g.constant(sinusoid(t, d, opts.position_signal));
            h = g.add(h, pe)?;
        }
        let pos = self.conv_tm(g, h, &format!("{pre}.pos_conv"), 1, self.cfg.pos_conv_groups)?;
        let pos = g.gelu(pos);
        h = g.add(h, pos)?;
        h = self.layer_norm(g, h, &format!("{pre}.ln"))?;
        h = g.dropout(h, rate, drop, rng)?;
        for j in 0..tf.layers {
            if opts.noise.layerdrop && tf.layerdrop > 0.0 && rng.random::<f64>() < tf.layerdrop {
                continue;
            }
            h = self.transformer_layer(g, h, &format!("{pre}.layer{j}"), tf, drop, rng)?;
        }
        Ok(h)
    }

    fn transformer_layer(
        &self,
        g: &mut Graph<T>,
        x: Var,
        pre: &str,
        tf: &TransformerConfig,
        drop: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let d = tf.dim;
        let dh = d / tf.heads;
        let rate = self.cfg.dropout;
        let qkv = self.linear(g, x, &format!("{pre}.attn.qkv"))?;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(tf.heads);
        for h in 0..tf.heads {
            let q = g.slice_cols(qkv, h * dh, dh)?;
            let k = g.slice_cols(qkv, d + h * dh, dh)?;
            let v = g.slice_cols(qkv, 2 * d + h * dh, dh)?;
            let s = g.matmul_nt(q, k)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            heads.push(g.matmul(a, v)?);
        }
        let att = g.concat_cols(&heads)?;
        let att = self.linear(g, att, &format!("{pre}.attn.out"))?;
        let att = g.dropout(att, rate, drop, rng)?;
        let h = g.add(x, att)?;
        let h = self.layer_norm(g, h, &format!("{pre}.ln1"))?;
        let f = self.linear(g, h, &format!("{pre}.ffn.fc1"))?;
        let f = g.gelu(f);
        let f = g.dropout(f, rate, drop, rng)?;
        let f = self.linear(g, f, &format!("{pre}.ffn.fc2"))?;
        let f = g.dropout(f, rate, drop, rng)?;
        let h = g.add(h, f)?;
        self.layer_norm(g, h, &format!("{pre}.ln2"))
    }

    /// Encoder on `x: [T, n_mels]`, returning `[T_out, D]`.
    pub fn encode(&self, g: &mut Graph<T>, x: Var, opts: &EncodeOptions, rng: &mut impl Rng) -> Result<Var> {
        let (t, m) = (g.shape(x)[0], g.shape(x).get(1).copied().unwrap_or(0));
        if m != self.cfg.n_mels {
            return Err(Error::shape("encode", format!("expected {} mel bands, got {m}", self.cfg.n_mels)));
        }
        if t < self.cfg.total_stride() {
            return Err(Error::invalid(
                "encode",
                format!("{t} frames is shorter than the total stride {}", self.cfg.total_stride()),
            ));
        }
        let h = self.conv_stack(g, x, "block1", &self.cfg.conv1)?;
        let h = self.transformer(g, h, "block1", &self.cfg.transformer1, opts, rng)?;
        let h = self.conv_stack(g, h, "block2", &self.cfg.conv2)?;
        self.transformer(g, h, "block2", &self.cfg.transformer2, opts, rng)
    }

    /// Projection head into the contrastive space.
    pub fn project(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        match self.cfg.projection_head {
            ProjectionHead::Linear => self.linear(g, h, "projection"),
            ProjectionHead::Conv => {
                let h = self.conv_ln_relu(g, h, "projection.conv", 1)?;
                self.linear(g, h, "projection.linear")
            }
        }
    }

    /// Predictor convolutions (normalization + ReLU each) followed by a linear layer.
    ///
    /// `bn_mode` selects batch statistics (train) or running averages (eval).
    pub fn predict(&self, g: &mut Graph<T>, z: Var, bn_mode: Mode) -> Result<(Var, Vec<(String, NormStats<T>)>)> {
        let p = &self.cfg.predictor;
        let mut h = z;
        let mut stats = Vec::new();
        for i in 0..p.kernels.len() - 1 {
            let pre = format!("predictor.conv{i}");
            h = self.conv_tm(g, h, &pre, 1, 1)?;
            h = match p.norm {
                NormChoice::Layer => self.layer_norm(g, h, &format!("{pre}.ln"))?,
                NormChoice::Batch => {
                    let bn = format!("{pre}.bn");
                    let running = NormStats {
                        mean: self.params.get(&format!("{bn}.running_mean"))?.data().to_vec(),
                        var: self.params.get(&format!("{bn}.running_var"))?.data().to_vec(),
                    };
                    let gamma = self.p(&format!("{bn}.gamma"))?;
                    let beta = self.p(&format!("{bn}.beta"))?;
                    let (y, s) = g.batch_norm(h, gamma, beta, &running, bn_mode, self.cfg.bn_eps)?;
                    if let Some(s) = s {
                        stats.push((bn, s));
                    }
                    y
                }
            };
            h = g.relu(h);
        }
        Ok((self.linear(g, h, "predictor.linear")?, stats))
    }

    /// Student: encoder, projection, then predictor when enabled.
    pub fn student(
        &self,
        g: &mut Graph<T>,
        x: Var,
        opts: &EncodeOptions,
        bn_mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<StudentOutput<T>> {
        let h = self.encode(g, x, opts, rng)?;
        let z = self.project(g, h)?;
        if self.cfg.predictor.enabled {
            let (z, bn_stats) = self.predict(g, z, bn_mode)?;
            Ok(StudentOutput { z, bn_stats })
        } else {
            Ok(StudentOutput { z, bn_stats: vec![] })
        }
    }
}

/// Gradient-free encoder pass over a feature sequence.
pub fn encode<T: Real>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    f: &FeatureSequence,
    opts: &EncodeOptions,
    rng: &mut impl Rng,
) -> Result<Representation<T>> {
    let mut g = Graph::new();
    let net = Net::bind(cfg, params, &mut g, |_| false);
    let x = g.constant(f.to_tensor());
    let h = net.encode(&mut g, x, opts, rng)?;
    Ok(Representation {
        frames: g.value(h).clone(),
        frame_rate_ms: f.frame_shift_ms * cfg.total_stride() as f64,
    })
}

/// Gradient-free student pass (predictor in eval mode).
pub fn student_forward<T: Real>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    f: &FeatureSequence,
    opts: &EncodeOptions,
    rng: &mut impl Rng,
) -> Result<Representation<T>> {
    let mut g = Graph::new();
    let net = Net::bind(cfg, params, &mut g, |_| false);
    let x = g.constant(f.to_tensor());
    let out = net.student(&mut g, x, opts, Mode::Eval, rng)?;
    Ok(Representation {
        frames: g.value(out.z).clone(),
        frame_rate_ms: f.frame_shift_ms * cfg.total_stride() as f64,
    })
}

/// Teacher pass on padded input: encoder and projection (no predictor), then the
/// output frames produced by the padding are trimmed away.
pub fn teacher_forward<T: Real>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    f_padded: &FeatureSequence,
    padding: Padding,
    opts: &EncodeOptions,
    rng: &mut impl Rng,
) -> Result<Representation<T>> {
    let mut g = Graph::new();
    let net = Net::bind(cfg, params, &mut g, |_| false);
    let x = g.constant(f_padded.to_tensor());
    let h = net.encode(&mut g, x, opts, rng)?;
    let z = net.project(&mut g, h)?;
    let full = g.value(z);
    let n = full.shape()[0];
    let drop = padding.offset_out + padding.trailing_out;
    if drop >= n {
        return Err(Error::shape(
            "teacher_forward",
            format!("cannot trim {drop} padded frames from {n} output frames"),
        ));
    }
    Ok(Representation {
        frames: full.slice_rows(padding.offset_out, n - drop)?,
        frame_rate_ms: f_padded.frame_shift_ms * cfg.total_stride() as f64,
    })
}
