use rand::Rng;
use spiral_core::ctc::{ctc_loss, ctc_loss_node, BLANK};
use spiral_core::numerics::Tensor;

use super::{grad_check, rng};

/// `−log Σ_π Π_t p(π_t)` over every length-`T` path that collapses to `labels`,
/// enumerated exhaustively.
pub fn brute_force_ctc(log_probs: &Tensor<f64>, labels: &[usize]) -> f64 {
    let (t, v) = log_probs.dims2().unwrap();
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % v;
            c /= v;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &p in &path {
            if Some(p) != prev && p != BLANK {
                collapsed.push(p);
            }
            prev = Some(p);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(i, &p)| log_probs.at2(i, p)).sum::<f64>().exp();
        }
    }
    -total.ln()
}

/// Random normalized `[T, V]` log-probabilities with `T ≤ 6`, `V ≤ 4`, and a label
/// sequence of length ≤ 3 that fits in `T` frames.
pub fn random_instance(r: &mut impl Rng) -> (Tensor<f64>, Vec<usize>) {
    loop {
        let t = r.random_range(1..=6);
        let v = r.random_range(2..=4);
        let n = r.random_range(0..=3);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(1..v)).collect();
        let needed = labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count();
        if needed > t {
            continue;
        }
        let mut data = Vec::with_capacity(t * v);
        for _ in 0..t {
            let logits: Vec<f64> = (0..v).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
            let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
            data.extend(logits.iter().map(|x| x - lse));
        }
        return (Tensor::new(vec![t, v], data).unwrap(), labels);
    }
}

/// Largest |forward − brute force| over `n` random instances.
pub fn oracle_max_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (lp, labels) = random_instance(&mut r);
            let (fast, _) = ctc_loss(&lp, &labels).unwrap();
            (fast - brute_force_ctc(&lp, &labels)).abs()
        })
        .fold(0.0, f64::max)
}

/// Worst finite-difference relative error of the CTC loss (through log-softmax)
/// over `n` random instances.
pub fn gradient_max_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (lp, labels) = random_instance(&mut r);
            grad_check(&[lp], 100, |g, v| {
                let l = g.log_softmax_rows(v[0]);
                ctc_loss_node(g, l, &labels).unwrap()
            })
        })
        .fold(0.0, f64::max)
}
