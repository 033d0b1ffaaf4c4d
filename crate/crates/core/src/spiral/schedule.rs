use std::f64::consts::PI;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Cosine schedule of the teacher's EMA coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaSchedule {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub total_steps: u64,
}

impl EmaSchedule {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("ema.alpha_start", self.alpha_start), ("ema.alpha_end", self.alpha_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, format!("{v} is outside [0, 1]")));
            }
        }
        if self.alpha_start > self.alpha_end {
            return Err(Error::config(
                "ema.alpha_start",
                format!("{} exceeds alpha_end {}", self.alpha_start, self.alpha_end),
            ));
        }
        Ok(())
    }
}

/// `α_t = end − (end − start)·(cos(πt/T) + 1)/2`, evaluated as a convex combination
/// so both endpoints are reproduced exactly.
pub fn alpha_at(sched: &EmaSchedule, t: u64) -> Result<f64> {
    sched.validate()?;
    if t > sched.total_steps {
        return Err(Error::invalid(
            "alpha_at",
            format!("step {t} beyond schedule length {}", sched.total_steps),
        ));
    }
    if sched.total_steps == 0 {
        return Ok(sched.alpha_end);
    }
    let c = ((PI * t as f64 / sched.total_steps as f64).cos() + 1.0) / 2.0;
    Ok(sched.alpha_start * c + sched.alpha_end * (1.0 - c))
}

/// Linear warm-up from 0 to `peak` over the first `warmup_frac` of updates, then
/// cosine decay to 0 at `total`.
pub fn lr_pretrain(t: u64, total: u64, peak: f64, warmup_frac: f64) -> f64 {
    if total == 0 || t >= total {
        return 0.0;
    }
    let (t, total) = (t as f64, total as f64);
    let warm = warmup_frac * total;
    if t < warm {
        peak * t / warm
    } else {
        let progress = (t - warm) / (total - warm);
        peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Indices of the utterances forming batch `step` (0-based): consecutive slices of
/// a per-epoch seeded permutation, wrapping into the next epoch when needed.
pub fn batch_indices(seed: u64, step: u64, n_items: usize, batch: usize) -> Vec<usize> {
    if n_items == 0 {
        return vec![];
    }
    let perm = |epoch: u64| {
        let mut p: Vec<usize> = (0..n_items).collect();
        p.shuffle(&mut rng::stream(seed, Stream::Shuffle, &[epoch]));
        p
    };
    let start = step as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut epoch = (start / n_items) as u64;
    let mut current = perm(epoch);
    let mut pos = start % n_items;
    while out.len() < batch {
        if pos == n_items {
            epoch += 1;
            current = perm(epoch);
            pos = 0;
        }
        out.push(current[pos]);
        pos += 1;
    }
    out
}
