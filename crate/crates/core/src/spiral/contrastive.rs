use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

/// In-utterance contrastive objective settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub num_distractors: usize,
    pub temperature: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            num_distractors: 10,
            temperature: 0.1,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_distractors == 0 {
            return Err(Error::config("contrastive.num_distractors", "must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("contrastive.temperature", "must be positive"));
        }
        Ok(())
    }

    /// Accuracy of a guess among the positive and its distractors.
    pub fn chance(&self) -> f64 {
        1.0 / (self.num_distractors + 1) as f64
    }
}

/// `min(k, t − 1)` distinct positions of `0..t` other than `i`, uniformly at random.
pub fn sample_distractors(t: usize, i: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if t < 2 || i >= t {
        return Err(Error::invalid(
            "sample_distractors",
            format!("position {i} of a {t}-frame utterance has no distractors"),
        ));
    }
    let n = k.min(t - 1);
    Ok(index::sample(rng, t - 1, n)
        .into_iter()
        .map(|j| if j >= i { j + 1 } else { j })
        .collect())
}

/// Loss node and accuracy of one utterance.
pub struct ContrastiveOutput {
    /// Mean over positions of the per-position cross-entropy.
    pub loss: Var,
    pub accuracy: f64,
    pub positions: usize,
}

fn normalized_rows<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    let d = z.shape()[1];
    let mut out = z.clone();
    for row in out.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm > T::zero() {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Contrastive loss of student frames `z` against constant teacher frames.
///
/// For position `i` the logits are cosine similarities over `κ` between `z_i` and
/// `[z′_i, z′_j for j ∈ D_i]`; the loss is the cross-entropy of the positive. The
/// positive counts as correct when it is strictly more similar than every distractor.
pub fn contrastive_node<T: Real>(
    g: &mut Graph<T>,
    z: Var,
    target: &Tensor<T>,
    cfg: &ContrastiveConfig,
    rng: &mut impl Rng,
) -> Result<ContrastiveOutput> {
    cfg.validate()?;
    let zs = g.shape(z).to_vec();
    if zs.len() != 2 || target.shape() != zs.as_slice() {
        return Err(Error::shape(
            "contrastive_loss",
            format!("student {zs:?} vs teacher {:?}", target.shape()),
        ));
    }
    let t = zs[0];
    if t < 2 {
        return Err(Error::invalid("contrastive_loss", "need at least 2 frames"));
    }
    let k = cfg.num_distractors.min(t - 1);
    let mut idx = Vec::with_capacity(t * (k + 1));
    for i in 0..t {
        idx.push(i);
        idx.extend(sample_distractors(t, i, k, rng)?);
    }
    let zn = g.l2_normalize_rows(z)?;
    let tn = g.constant(normalized_rows(target));
    let sims = g.matmul_nt(zn, tn)?;
    let logits = g.scale(sims, T::of(1.0 / cfg.temperature));
    let picked = g.gather_cols(logits, idx, k + 1)?;
    let correct = g
        .value(picked)
        .data()
        .chunks(k + 1)
        .filter(|row| row[1..].iter().all(|&d| row[0] > d))
        .count();
    let loss = g.cross_entropy(picked, &vec![0; t])?;
    Ok(ContrastiveOutput {
        loss,
        accuracy: correct as f64 / t as f64,
        positions: t,
    })
}

/// Value-only form: `(mean loss per position, accuracy)`.
pub fn contrastive_loss<T: Real>(
    z: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &ContrastiveConfig,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let out = contrastive_node(&mut g, zv, target, cfg, rng)?;
    Ok((g.value(out.loss).data()[0].f64(), out.accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn two_frames_force_the_other_index() {
        let mut r = stream(1, Stream::Distractors, &[]);
        assert_eq!(sample_distractors(2, 0, 5, &mut r).unwrap(), vec![1]);
        assert_eq!(sample_distractors(2, 1, 5, &mut r).unwrap(), vec![0]);
        assert!(sample_distractors(1, 0, 5, &mut r).is_err());
    }

    #[test]
    fn positive_is_never_a_distractor() {
        let mut r = stream(2, Stream::Distractors, &[]);
        for n in 0..10_000 {
            let t = 2 + n % 17;
            let i = n % t;
            let d = sample_distractors(t, i, 10, &mut r).unwrap();
            assert!(!d.contains(&i));
            assert_eq!(d.len(), 10.min(t - 1));
            let mut s = d.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), d.len());
        }
    }

    #[test]
    fn orthogonal_frames_hand_value() {
        let z = Tensor::<f64>::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let cfg = ContrastiveConfig {
            num_distractors: 1,
            temperature: 1.0,
        };
        let (loss, acc) = contrastive_loss(&z, &z, &cfg, &mut stream(3, Stream::Distractors, &[])).unwrap();
        let e = std::f64::consts::E;
        assert!((loss + (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn scale_invariance() {
        let mut r = stream(4, Stream::Probe, &[]);
        let z = Tensor::<f64>::from_fn(&[6, 5], |_| r.random_range(-1.0..1.0));
        let zt = Tensor::<f64>::from_fn(&[6, 5], |_| r.random_range(-1.0..1.0));
        let cfg = ContrastiveConfig::default();
        let (a, _) = contrastive_loss(&z, &zt, &cfg, &mut stream(5, Stream::Distractors, &[])).unwrap();
        let scaled = Tensor::from_fn(&[6, 5], |i| z.data()[i] * (1.0 + (i / 5) as f64 * 3.0));
        let (b, _) = contrastive_loss(&scaled, &zt.map(|v| v * 7.0), &cfg, &mut stream(5, Stream::Distractors, &[]))
            .unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[3, 2]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let cfg = ContrastiveConfig::default();
        assert!(contrastive_loss(&a, &b, &cfg, &mut stream(1, Stream::Distractors, &[])).is_err());
    }
}
