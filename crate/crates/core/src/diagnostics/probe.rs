use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Training settings of a linear probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            l2: 1e-4,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression on standardized features, trained full-batch
/// with Adam; returns accuracy on the held-out split.
pub fn probe_accuracy(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("probe", format!("{} samples vs {} labels", x.len(), y.len())));
    }
    if n_classes < 2 || y.iter().any(|&c| c >= n_classes) {
        return Err(Error::invalid("probe", "labels must lie in 0..n_classes with n_classes >= 2"));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|v| v.len() != d) {
        return Err(Error::shape("probe", "all samples need the same non-zero dimension"));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, Stream::Probe, &[]));
    let n_train = ((x.len() as f64 * cfg.train_frac).round() as usize).clamp(1, x.len() - 1);
    let (train, test) = order.split_at(n_train);

    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for &i in train {
        mean.iter_mut().zip(&x[i]).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in train {
        std.iter_mut()
            .zip(&x[i])
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m).powi(2));
    }
    std.iter_mut().for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-8));
    let feat = |i: usize| -> Vec<f64> { x[i].iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect() };
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| feat(i)).collect();
    let xte: Vec<Vec<f64>> = test.iter().map(|&i| feat(i)).collect();

    let c = n_classes;
    let n_par = (d + 1) * c;
    let mut w = vec![0.0; n_par];
    let (mut m1, mut m2) = (vec![0.0; n_par], vec![0.0; n_par]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let logits = |w: &[f64], v: &[f64], out: &mut [f64]| {
        for k in 0..c {
            let row = &w[k * (d + 1)..(k + 1) * (d + 1)];
            out[k] = row[d] + row[..d].iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    };
    let mut z = vec![0.0; c];
    for epoch in 1..=cfg.epochs {
        let mut grad = vec![0.0; n_par];
        for (v, &i) in xtr.iter().zip(train) {
            logits(&w, v, &mut z);
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|a| (a - mx).exp()).sum();
            for k in 0..c {
                let p = (z[k] - mx).exp() / sum - if k == y[i] { 1.0 } else { 0.0 };
                let g = &mut grad[k * (d + 1)..(k + 1) * (d + 1)];
                g[..d].iter_mut().zip(v).for_each(|(gj, vj)| *gj += p * vj);
                g[d] += p;
            }
        }
        let inv = 1.0 / xtr.len() as f64;
        let (bc1, bc2) = (1.0 - b1.powi(epoch as i32), 1.0 - b2.powi(epoch as i32));
        for j in 0..n_par {
            let g = grad[j] * inv + cfg.l2 * w[j];
            m1[j] = b1 * m1[j] + (1.0 - b1) * g;
            m2[j] = b2 * m2[j] + (1.0 - b2) * g * g;
            w[j] -= cfg.lr * (m1[j] / bc1) / ((m2[j] / bc2).sqrt() + eps);
        }
    }
    let correct = xte
        .iter()
        .zip(test)
        .filter(|(v, &i)| {
            logits(&w, v, &mut z);
            let best = (0..c).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            best == y[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Bucket of output frame `i`: `min(i / width, buckets − 1)`.
pub fn position_bucket(i: usize, width: usize, buckets: usize) -> usize {
    (i / width.max(1)).min(buckets - 1)
}

/// Held-out accuracy of predicting the position bucket of each representation.
///
/// Only frames with index below `buckets · width` take part, so every bucket spans
/// the same number of frame indices and chance stays near `1 / buckets`.
pub fn position_probe(
    reps: &[Vec<f64>],
    frame_index: &[usize],
    buckets: usize,
    width: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if buckets < 2 || width == 0 {
        return Err(Error::invalid("position_probe", "need at least 2 buckets of non-zero width"));
    }
    if reps.len() != frame_index.len() {
        return Err(Error::invalid(
            "position_probe",
            format!("{} samples vs {} indices", reps.len(), frame_index.len()),
        ));
    }
    let (x, y): (Vec<Vec<f64>>, Vec<usize>) = reps
        .iter()
        .zip(frame_index)
        .filter(|(_, &i)| i < buckets * width)
        .map(|(r, &i)| (r.clone(), position_bucket(i, width, buckets)))
        .unzip();
    if x.len() < 20 * buckets {
        return Err(Error::invalid(
            "position_probe",
            format!("{} samples for {buckets} buckets; need at least {}", x.len(), 20 * buckets),
        ));
    }
    probe_accuracy(&x, &y, buckets, cfg)
}

/// Held-out accuracy of predicting each frame's content class. Returns the accuracy
/// and the number of distinct classes present.
pub fn content_probe(reps: &[Vec<f64>], labels: &[usize], cfg: &ProbeConfig) -> Result<(f64, usize)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("content_probe", "need at least 2 content classes"));
    }
    if reps.len() < 20 * classes.len() {
        return Err(Error::invalid(
            "content_probe",
            format!("{} samples for {} classes; need at least {}", reps.len(), classes.len(), 20 * classes.len()),
        ));
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("present"))
        .collect();
    Ok((probe_accuracy(reps, &y, classes.len(), cfg)?, classes.len()))
}
