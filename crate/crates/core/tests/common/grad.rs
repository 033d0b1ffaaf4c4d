use spiral_core::audio::{self, synth_utterance, AudioSource, MelFrontend, SynthConfig};
use spiral_core::ctc::{ctc_loss_node, Vocabulary};
use spiral_core::model::{self, EncodeOptions, ModelConfig, Net, Noise};
use spiral_core::numerics::{Graph, Mode, NormStats, ParamSet, Tensor};
use spiral_core::perturb::Padding;
use spiral_core::spiral::{contrastive_node, ContrastiveConfig};

use super::{grad_check, probe_sum, randn, rng};

/// Relative gradient error of every differentiable graph operation, on inputs
/// whose shapes derive from `n` rows and `d` columns.
pub fn op_cases(n: usize, d: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let s = seed * 100;
    let a = randn(&[n, d], s + 1);
    let b = randn(&[n, d], s + 2);
    let w = randn(&[d, d + 1], s + 3);
    let row = randn(&[d], s + 4);
    let row5 = randn(&[d + 1], s + 5);
    let x6 = randn(&[n + 3, d], s + 6);
    let mut out = Vec::new();
    let c = 1000;
    out.push(("add", grad_check(&[a.clone(), b.clone()], c, |g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        probe_sum(g, y, 1)
    })));
    out.push(("sub", grad_check(&[a.clone(), b.clone()], c, |g, v| {
        let y = g.sub(v[0], v[1]).unwrap();
        probe_sum(g, y, 2)
    })));
    out.push(("mul", grad_check(&[a.clone(), b.clone()], c, |g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        probe_sum(g, y, 3)
    })));
    out.push(("add_row", grad_check(&[a.clone(), row.clone()], c, |g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        probe_sum(g, y, 4)
    })));
    out.push(("scale", grad_check(&[a.clone()], c, |g, v| {
        let y = g.scale(v[0], -1.7);
        probe_sum(g, y, 5)
    })));
    out.push(("matmul", grad_check(&[a.clone(), w.clone()], c, |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        probe_sum(g, y, 6)
    })));
    out.push(("matmul_nt", grad_check(&[a.clone(), x6.clone()], c, |g, v| {
        let y = g.matmul_nt(v[0], v[1]).unwrap();
        probe_sum(g, y, 7)
    })));
    out.push(("linear", grad_check(&[a.clone(), w.clone(), row5], c, |g, v| {
        let y = g.linear(v[0], v[1], v[2]).unwrap();
        probe_sum(g, y, 8)
    })));
    out.push(("transpose", grad_check(&[a.clone()], c, |g, v| {
        let y = g.transpose(v[0]).unwrap();
        probe_sum(g, y, 9)
    })));
    out.push(("reshape", grad_check(&[a.clone()], c, |g, v| {
        let y = g.reshape(v[0], &[d, n]).unwrap();
        probe_sum(g, y, 10)
    })));
    out.push(("relu", grad_check(&[a.clone()], c, |g, v| {
        let y = g.relu(v[0]);
        probe_sum(g, y, 11)
    })));
    out.push(("gelu", grad_check(&[a.clone()], c, |g, v| {
        let y = g.gelu(v[0]);
        probe_sum(g, y, 12)
    })));
    out.push(("slice_rows", grad_check(&[x6.clone()], c, |g, v| {
        let y = g.slice_rows(v[0], 2, n).unwrap();
        probe_sum(g, y, 13)
    })));
    out.push(("slice_cols", grad_check(&[x6.clone()], c, |g, v| {
        let y = g.slice_cols(v[0], 1, d - 1).unwrap();
        probe_sum(g, y, 14)
    })));
    out.push(("concat_rows", grad_check(&[a.clone(), x6.clone()], c, |g, v| {
        let y = g.concat_rows(&[v[0], v[1]]).unwrap();
        probe_sum(g, y, 15)
    })));
    out.push(("concat_cols", grad_check(&[a.clone(), randn(&[n, d + 1], s + 7)], c, |g, v| {
        let y = g.concat_cols(&[v[0], v[1]]).unwrap();
        probe_sum(g, y, 16)
    })));
    out.push(("softmax_rows", grad_check(&[a.clone()], c, |g, v| {
        let y = g.softmax_rows(v[0]);
        probe_sum(g, y, 17)
    })));
    out.push(("log_softmax_rows", grad_check(&[a.clone()], c, |g, v| {
        let y = g.log_softmax_rows(v[0]);
        probe_sum(g, y, 18)
    })));
    out.push(("layer_norm", grad_check(&[a.clone(), row.clone(), randn(&[d], s + 19)], c, |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        probe_sum(g, y, 19)
    })));
    let running = NormStats {
        mean: vec![0.1; d],
        var: vec![1.3; d],
    };
    out.push(("batch_norm", grad_check(&[x6.clone(), row.clone(), randn(&[d], s + 20)], c, |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], &running, Mode::Train, 1e-5).unwrap();
        probe_sum(g, y, 20)
    })));
    out.push(("batch_norm_eval", grad_check(&[x6.clone(), row.clone(), randn(&[d], s + 21)], c, |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], &running, Mode::Eval, 1e-5).unwrap();
        probe_sum(g, y, 21)
    })));
    let xc = randn(&[2 * d, n + 8], s + 22);
    out.push(("conv1d", grad_check(&[xc.clone(), randn(&[4, 2 * d, 3], s + 23), randn(&[4], s + 24)], c, |g, v| {
        let y = g.conv1d(v[0], v[1], Some(v[2]), 1, 1, 1).unwrap();
        probe_sum(g, y, 22)
    })));
    out.push(("conv1d_strided", grad_check(&[xc.clone(), randn(&[3, 2 * d, 4], s + 25)], c, |g, v| {
        let y = g.conv1d(v[0], v[1], None, 2, 1, 1).unwrap();
        probe_sum(g, y, 23)
    })));
    out.push(("conv1d_grouped", grad_check(&[xc, randn(&[6, d, 5], s + 26), randn(&[6], s + 27)], c, |g, v| {
        let y = g.conv1d(v[0], v[1], Some(v[2]), 1, 2, 2).unwrap();
        probe_sum(g, y, 24)
    })));
    out.push(("dropout", grad_check(&[a.clone()], c, |g, v| {
        let y = g.dropout(v[0], 0.3, Mode::Train, &mut rng(s + 7)).unwrap();
        probe_sum(g, y, 25)
    })));
    out.push(("sum", grad_check(&[a.clone()], c, |g, v| {
        let y = g.mul(v[0], v[0]).unwrap();
        g.sum(y)
    })));
    out.push(("mean", grad_check(&[a.clone()], c, |g, v| {
        let y = g.mul(v[0], v[0]).unwrap();
        g.mean(y)
    })));
    out.push(("l2_normalize_rows", grad_check(&[a.clone()], c, |g, v| {
        let y = g.l2_normalize_rows(v[0]).unwrap();
        probe_sum(g, y, 26)
    })));
    out.push(("gather_cols", grad_check(&[a.clone()], c, |g, v| {
        let y = g.gather_cols(v[0], (0..2 * n).map(|i| (3 * i + 1) % d).collect(), 2).unwrap();
        probe_sum(g, y, 27)
    })));
    out.push(("cross_entropy", grad_check(&[a.clone()], c, |g, v| g.cross_entropy(v[0], &(0..n).map(|i| (i + 1) % d).collect::<Vec<_>>()).unwrap())));
    out.push(("upsample", grad_check(&[a.clone(), randn(&[d, 4 * d], s + 28), randn(&[4 * d], s + 29)], c, |g, v| {
        let y = model::upsample(g, v[0], v[1], Some(v[2])).unwrap();
        probe_sum(g, y, 28)
    })));
    let lp = randn(&[n + 4, d + 1], s + 30);
    out.push(("ctc_loss", grad_check(&[lp], c, |g, v| {
        let l = g.log_softmax_rows(v[0]);
        ctc_loss_node(g, l, &[1, d, d]).unwrap()
    })));
    let target = randn(&[n + 3, d], s + 31);
    let cc = ContrastiveConfig {
        num_distractors: 3,
        temperature: 0.1,
    };
    out.push(("contrastive", grad_check(&[x6], c, |g, v| {
        contrastive_node(g, v[0], &target, &cc, &mut rng(s + 8)).unwrap().loss
    })));
    out
}

/// Tiny model, one synthetic utterance: features → student (computation noise on,
/// fixed draws) → contrastive loss against a fixed teacher target.
pub struct ComposedCase {
    cfg: ModelConfig,
    params: ParamSet<f64>,
    features: Tensor<f64>,
    target: Tensor<f64>,
    contrastive: ContrastiveConfig,
}

impl ComposedCase {
    pub fn new(seed: u64) -> Self {
        let cfg = ModelConfig::tiny();
        let params = model::build::<f64>(&cfg, seed).unwrap();
        let vocab = Vocabulary::characters();
        let u = synth_utterance(seed, "spiral", &vocab, &SynthConfig::default()).unwrap();
        let AudioSource::Samples(w) = &u.record.audio else { unreachable!() };
        let frontend = MelFrontend::new(spiral_core::config::Config::default().frontend);
        let f = audio::features(&frontend, w).unwrap();
        let teacher = params.without_prefix(spiral_core::numerics::PREDICTOR_PREFIX);
        let target = model::teacher_forward(&cfg, &teacher, &f, Padding::none(), &EncodeOptions::new(Noise::OFF), &mut rng(0))
            .unwrap()
            .frames;
        Self {
            cfg,
            params,
            features: f.to_tensor(),
            target,
            contrastive: ContrastiveConfig::default(),
        }
    }

    fn loss(&self, params: &ParamSet<f64>) -> (f64, std::collections::BTreeMap<String, Tensor<f64>>) {
        let mut g = Graph::new();
        let net = Net::bind(&self.cfg, params, &mut g, |_| true);
        let x = g.constant(self.features.clone());
        let out = net
            .student(&mut g, x, &EncodeOptions::new(Noise::ON), Mode::Train, &mut rng(11))
            .unwrap();
        let c = contrastive_node(&mut g, out.z, &self.target, &self.contrastive, &mut rng(12)).unwrap();
        let value = g.value(c.loss).data()[0];
        let mut grads = g.backward(c.loss).unwrap();
        (value, net.bound().gradients(&mut grads))
    }

    /// Worst per-tensor relative error over `per_tensor` perturbed entries of every
    /// trainable tensor, with the name of the worst tensor.
    pub fn check(&self, per_tensor: usize) -> (f64, String) {
        let (_, analytic) = self.loss(&self.params);
        let h = 1e-5;
        let mut worst = (0.0, String::new());
        for (name, grad) in &analytic {
            let n = grad.numel();
            let step = n.div_ceil(per_tensor).max(1);
            let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
            for j in (0..n).step_by(step) {
                let mut p = self.params.clone();
                p.get_mut(name).unwrap().data_mut()[j] += h;
                let up = self.loss(&p).0;
                p.get_mut(name).unwrap().data_mut()[j] -= 2.0 * h;
                let down = self.loss(&p).0;
                let num = (up - down) / (2.0 * h);
                let a = grad.data()[j];
                diff += (a - num).powi(2);
                na += a * a;
                nn += num * num;
            }
            let scale = na.sqrt().max(nn.sqrt()).max(super::GRAD_FLOOR);
            if diff.sqrt() / scale > worst.0 {
                worst = (diff.sqrt() / scale, name.clone());
            }
        }
        worst
    }
}
