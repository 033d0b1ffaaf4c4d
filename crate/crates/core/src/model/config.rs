use crate::error::{Error, Result};

/// A stack of temporal convolutions, each followed by layer norm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackConfig {
    pub kernels: Vec<usize>,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl ConvStackConfig {
    pub fn stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub layerdrop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormChoice {
    Batch,
    Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionHead {
    /// A single linear layer.
    Linear,
    /// Temporal convolution with layer norm and ReLU, then a linear layer.
    Conv,
}

/// Student-only head: convolutions with normalization and ReLU, then a linear layer
/// (the final kernel entry, which must be 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub enabled: bool,
    pub kernels: Vec<usize>,
    pub channels: Vec<usize>,
    pub norm: NormChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub conv1: ConvStackConfig,
    pub transformer1: TransformerConfig,
    pub conv2: ConvStackConfig,
    pub transformer2: TransformerConfig,
    pub projection_dim: usize,
    pub projection_head: ProjectionHead,
    pub projection_conv_kernel: usize,
    pub predictor: PredictorConfig,
    pub dropout: f64,
    pub pos_conv_kernel: usize,
    pub pos_conv_groups: usize,
    pub ln_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Desk-scale preset used by the tests and the default configuration.
    pub fn tiny() -> Self {
        Self {
            n_mels: 128,
            conv1: ConvStackConfig {
                kernels: vec![5, 5, 1],
                channels: vec![48, 64, 64],
                strides: vec![2, 2, 1],
            },
            transformer1: TransformerConfig {
                layers: 1,
                dim: 64,
                ffn_dim: 128,
                heads: 4,
                layerdrop: 0.0,
            },
            conv2: ConvStackConfig {
                kernels: vec![5, 1],
                channels: vec![128, 64],
                strides: vec![2, 1],
            },
            transformer2: TransformerConfig {
                layers: 2,
                dim: 64,
                ffn_dim: 128,
                heads: 4,
                layerdrop: 0.05,
            },
            projection_dim: 32,
            projection_head: ProjectionHead::Linear,
            projection_conv_kernel: 5,
            predictor: PredictorConfig {
                enabled: true,
                kernels: vec![5, 5, 1],
                channels: vec![32, 32, 32],
                norm: NormChoice::Batch,
            },
            dropout: 0.1,
            pos_conv_kernel: 31,
            pos_conv_groups: 16,
            ln_eps: 1e-5,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Base configuration of the reference architecture.
    pub fn base() -> Self {
        Self {
            conv1: ConvStackConfig {
                kernels: vec![5, 5, 1],
                channels: vec![384, 512, 512],
                strides: vec![2, 2, 1],
            },
            transformer1: TransformerConfig {
                layers: 2,
                dim: 512,
                ffn_dim: 2048,
                heads: 8,
                layerdrop: 0.0,
            },
            conv2: ConvStackConfig {
                kernels: vec![5, 1],
                channels: vec![1536, 768],
                strides: vec![2, 1],
            },
            transformer2: TransformerConfig {
                layers: 10,
                dim: 768,
                ffn_dim: 3072,
                heads: 12,
                layerdrop: 0.05,
            },
            projection_dim: 256,
            predictor: PredictorConfig {
                enabled: true,
                kernels: vec![5, 5, 1],
                channels: vec![256, 256, 256],
                norm: NormChoice::Batch,
            },
            pos_conv_kernel: 127,
            ..Self::tiny()
        }
    }

    /// Large configuration of the reference architecture.
    pub fn large() -> Self {
        Self {
            transformer1: TransformerConfig {
                layers: 4,
                dim: 512,
                ffn_dim: 2048,
                heads: 8,
                layerdrop: 0.05,
            },
            conv2: ConvStackConfig {
                kernels: vec![5, 1],
                channels: vec![2048, 1024],
                strides: vec![2, 1],
            },
            transformer2: TransformerConfig {
                layers: 20,
                dim: 1024,
                ffn_dim: 4096,
                heads: 16,
                layerdrop: 0.05,
            },
            projection_dim: 512,
            predictor: PredictorConfig {
                enabled: true,
                kernels: vec![5, 5, 1],
                channels: vec![512, 512, 512],
                norm: NormChoice::Batch,
            },
            ..Self::base()
        }
    }

    /// Product of all encoder conv strides.
    pub fn total_stride(&self) -> usize {
        self.conv1.stride() * self.conv2.stride()
    }

    /// Sequence length after every encoder conv layer, in order.
    pub fn stage_lengths(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut len = t;
        for stack in [&self.conv1, &self.conv2] {
            for (&k, &s) in stack.kernels.iter().zip(&stack.strides) {
                len = conv_out_len(len, k, s, (k - 1) / 2);
                out.push(len);
            }
        }
        out
    }

    /// Encoder output length for `t` input frames.
    pub fn output_len(&self, t: usize) -> usize {
        self.stage_lengths(t).last().copied().unwrap_or(t)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, detail: String| Err(Error::config(format!("model.{key}"), detail));
        if self.n_mels == 0 {
            return err("n_mels", "must be positive".into());
        }
        for (name, stack) in [("conv1", &self.conv1), ("conv2", &self.conv2)] {
            let n = stack.kernels.len();
            if n == 0 || stack.channels.len() != n || stack.strides.len() != n {
                return err(name, "kernels, channels and strides need equal, non-zero length".into());
            }
            if stack.kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
                return err(&format!("{name}.kernels"), "kernels must be odd".into());
            }
            if stack.channels.contains(&0) || stack.strides.contains(&0) {
                return err(name, "channels and strides must be positive".into());
            }
        }
        for (name, tf, stack) in [
            ("transformer1", &self.transformer1, &self.conv1),
            ("transformer2", &self.transformer2, &self.conv2),
        ] {
            if tf.dim == 0 || tf.ffn_dim == 0 || tf.heads == 0 {
                return err(name, "dims and heads must be positive".into());
            }
            if tf.dim % tf.heads != 0 {
                return err(&format!("{name}.heads"), format!("{} heads do not divide dim {}", tf.heads, tf.dim));
            }
            if stack.out_channels() != tf.dim {
                return err(
                    &format!("{name}.dim"),
                    format!("must equal the preceding conv channels {}", stack.out_channels()),
                );
            }
            if !(0.0..1.0).contains(&tf.layerdrop) {
                return err(&format!("{name}.layerdrop"), "must be in [0, 1)".into());
            }
            if tf.dim % self.pos_conv_groups != 0 {
                return err("pos_conv_groups", format!("must divide {name} dim {}", tf.dim));
            }
        }
        if self.pos_conv_kernel % 2 == 0 || self.pos_conv_groups == 0 {
            return err("pos_conv_kernel", "kernel must be odd and groups positive".into());
        }
        if self.projection_dim == 0 {
            return err("projection_dim", "must be positive".into());
        }
        if self.projection_conv_kernel % 2 == 0 {
            return err("projection_conv_kernel", "must be odd".into());
        }
        let p = &self.predictor;
        if p.kernels.len() < 2 || p.kernels.len() != p.channels.len() {
            return err("predictor", "needs matching kernels/channels with at least one conv".into());
        }
        if *p.kernels.last().unwrap() != 1 || p.kernels.iter().any(|&k| k % 2 == 0) {
            return err("predictor.kernels", "conv kernels must be odd and the final (linear) entry 1".into());
        }
        if *p.channels.last().unwrap() != self.projection_dim {
            return err("predictor.channels", "final channel count must equal projection_dim".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout", "must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// `floor((t + 2·padding − k) / stride) + 1`, or 0 when the kernel does not fit.
pub fn conv_out_len(t: usize, k: usize, stride: usize, padding: usize) -> usize {
    let span = t + 2 * padding;
    if span < k {
        0
    } else {
        (span - k) / stride + 1
    }
}

/// Convolutional classifier placed on the encoder for fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub channels: usize,
    pub kernel: usize,
    pub layers: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            kernel: 5,
            layers: 2,
        }
    }
}
