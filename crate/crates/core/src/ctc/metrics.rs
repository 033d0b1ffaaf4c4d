use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Levenshtein alignment of `hyp` against `reference`, with the operation breakdown.
pub fn edit_counts<A: PartialEq>(reference: &[A], hyp: &[A]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            if reference[i - 1] != hyp[j - 1] {
                c.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

pub fn edit_distance<A: PartialEq>(reference: &[A], hyp: &[A]) -> usize {
    edit_counts(reference, hyp).total()
}

fn rate<A: PartialEq>(reference: &[A], hyp: &[A]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Data("error rate of an empty reference".into()));
    }
    Ok(edit_distance(reference, hyp) as f64 / reference.len() as f64)
}

/// Word error rate over whitespace-separated tokens.
pub fn wer(reference: &str, hyp: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hyp.split_whitespace().collect();
    rate(&r, &h)
}

/// Character error rate.
pub fn cer(reference: &str, hyp: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hyp.chars().collect();
    rate(&r, &h)
}

/// Token-level error rate on pre-split sequences.
pub fn error_rate<A: PartialEq>(reference: &[A], hyp: &[A]) -> Result<f64> {
    rate(reference, hyp)
}
