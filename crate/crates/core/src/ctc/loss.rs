use crate::error::{Error, Result};
use crate::numerics::kernels::log_add;
use crate::numerics::{Graph, Real, Tensor, Var};

use super::vocab::BLANK;

/// Minimum frames needed to emit `labels`: one per label plus a blank between repeats.
pub fn required_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood and its gradient w.r.t. `log_probs: [T, V]`.
///
/// Uses the log-space forward and backward recursions over the blank-augmented
/// label sequence. When `T` is too short for `labels` the loss is `+∞` and the
/// gradient is zero.
pub fn ctc_loss<T: Real>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<T>)> {
    let (t_len, v) = log_probs.dims2()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= v || l == BLANK) {
        return Err(Error::invalid("ctc_loss", format!("label {bad} invalid for {v} classes")));
    }
    if t_len < required_frames(labels) || t_len == 0 {
        log::warn!(
            "ctc_loss: {t_len} frames cannot emit {} labels; loss is infinite",
            labels.len()
        );
        return Ok((f64::INFINITY, vec![T::zero(); t_len * v]));
    }
    let lp = |t: usize, k: usize| log_probs.data()[t * v + k].f64();
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(labels.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, ext[s]) };
        }
    }
    let last = (t_len - 1) * s_len;
    let log_p = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };

    let mut beta = vec![ninf; t_len * s_len];
    beta[last + s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && ext[s] != BLANK && ext[s] != ext[s + 2] {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + lp(t, ext[s]) };
        }
    }

    let mut grad = vec![T::zero(); t_len * v];
    let mut acc = vec![ninf; v];
    for t in 0..t_len {
        acc.iter_mut().for_each(|a| *a = ninf);
        for s in 0..s_len {
            let k = ext[s];
            acc[k] = log_add(acc[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for k in 0..v {
            if acc[k] > ninf {
                grad[t * v + k] = T::of(-(acc[k] - lp(t, k) - log_p).exp());
            }
        }
    }
    Ok((-log_p, grad))
}

/// CTC loss as a graph node over `log_probs: [T, V]`.
pub fn ctc_loss_node<T: Real>(g: &mut Graph<T>, log_probs: Var, labels: &[usize]) -> Result<Var> {
    let (loss, grad) = ctc_loss(g.value(log_probs), labels)?;
    Ok(g.custom_scalar(log_probs, T::of(loss), grad))
}
