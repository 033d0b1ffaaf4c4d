use super::vocab::{Vocabulary, BLANK};
use crate::numerics::{Real, Tensor};

/// Per-frame argmax path (first maximum wins ties).
pub fn best_path<T: Real>(log_probs: &Tensor<T>) -> Vec<usize> {
    let (_, v) = log_probs.last_dim();
    log_probs
        .data()
        .chunks(v)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// CTC collapse: merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

pub fn greedy_decode<T: Real>(log_probs: &Tensor<T>, vocab: &Vocabulary) -> String {
    vocab.decode(&collapse(&best_path(log_probs)))
}
