mod common;

use common::stats::*;
use common::{randn, rng};
use rand::Rng;
use spiral_core::diagnostics::{constant_collapse_score, position_probe, probe_accuracy, ProbeConfig};
use spiral_core::spiral::{contrastive_loss, ContrastiveConfig};

#[test]
fn specaugment_masked_fraction_matches_oracles() {
    let s = spec_augment_stats(400, 0.025, 20, 10_000, 1);
    assert_eq!(s.wrong_counts, 0);
    let mc = masked_fraction_oracle(400, 0.025, 20, 10_000, 2);
    let exact = masked_fraction_exact(400, 0.025, 20);
    assert!((s.masked_fraction - mc).abs() <= 0.03, "{} vs {mc}", s.masked_fraction);
    assert!((mc - exact).abs() < 0.005, "{mc} vs {exact}");
    assert!((s.masked_fraction - exact).abs() < 0.005, "{} vs {exact}", s.masked_fraction);
}

#[test]
fn exact_masked_fraction_small_case() {
    // T = 3, one start of length 2: starts 0, 1, 2 cover {0,1}, {1,2}, {2}.
    let f = masked_fraction_exact(3, 1.0 / 3.0, 2);
    assert!((f - 5.0 / 9.0).abs() < 1e-12);
}

#[test]
fn snr_is_exact() {
    let err = snr_max_error(1000, 3);
    assert!(err < 0.01, "{err}");
}

#[test]
fn contrastive_accuracy_is_at_chance_for_independent_frames() {
    let cfg = ContrastiveConfig::default();
    let (acc, n) = contrastive_chance(200, 40, 16, &cfg, 4);
    let p = 1.0 / (cfg.num_distractors as f64 + 1.0);
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "{acc} vs {p} ± {}", 3.0 * sigma);
}

#[test]
fn contrastive_loss_on_orthogonal_frames() {
    let z = orthogonal_pair();
    let cfg = ContrastiveConfig {
        num_distractors: 1,
        temperature: 1.0,
    };
    let (loss, acc) = contrastive_loss(&z, &z, &cfg, &mut rng(0)).unwrap();
    let e = std::f64::consts::E;
    assert!((loss + (e / (e + 1.0)).ln()).abs() < 1e-6);
    assert_eq!(acc, 1.0);
}

#[test]
fn positive_logit_is_inverse_temperature_when_frames_agree() {
    // Distractor logits are 0 for orthogonal frames, so loss = ln(1 + k·e^{−s⁺}).
    let z = orthogonal_pair();
    for kappa in [0.1, 0.5, 2.0] {
        let cfg = ContrastiveConfig {
            num_distractors: 1,
            temperature: kappa,
        };
        let (loss, _) = contrastive_loss(&z, &z, &cfg, &mut rng(1)).unwrap();
        let positive = -(loss.exp_m1()).ln();
        assert!((positive - 1.0 / kappa).abs() < 1e-9, "κ = {kappa}: {positive}");
    }
}

#[test]
fn probes_sit_at_chance_on_unrelated_labels() {
    let mut r = rng(5);
    let n = 2000;
    let x: Vec<Vec<f64>> = (0..n).map(|i| randn(&[8], 100 + i as u64).into_data()).collect();
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
    let cfg = ProbeConfig::default();
    let acc = probe_accuracy(&x, &y, 4, &cfg).unwrap();
    let n_test = n - (n as f64 * cfg.train_frac).round() as usize;
    let sigma = (0.25 * 0.75 / n_test as f64).sqrt();
    assert!((acc - 0.25).abs() <= 3.0 * sigma, "{acc}");
    let idx: Vec<usize> = (0..n).map(|i| i % 16).collect();
    let pos = position_probe(&x, &idx, 4, 4, &cfg).unwrap();
    assert!((pos - 0.25).abs() <= 3.0 * sigma, "{pos}");
}

#[test]
fn probes_find_planted_signal() {
    let n = 1000;
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = randn(&[6], 7000 + i as u64).into_data();
            v[y[i]] += 4.0;
            v
        })
        .collect();
    assert!(probe_accuracy(&x, &y, 3, &ProbeConfig::default()).unwrap() > 0.9);
}

#[test]
fn constant_score_is_near_zero_for_isotropic_gaussians() {
    let (n, d) = (200, 32);
    let v: Vec<Vec<f64>> = (0..n).map(|i| randn(&[d], 9000 + i as u64).into_data()).collect();
    let s = constant_collapse_score(&v).unwrap();
    // Pairwise cosines of isotropic vectors are uncorrelated with variance 1/d.
    let pairs = (n * (n - 1) / 2) as f64;
    let sigma = (1.0 / (d as f64 * pairs)).sqrt();
    assert!(s.raw.abs() < 4.0 * sigma, "{}", s.raw);
    assert!((0.0..=1.0).contains(&s.clipped));
}

#[test]
fn constant_score_matches_shared_offset_oracle() {
    // v = μ + ε with ‖μ‖² = d·m² and ε ~ N(0, I): E cos ≈ m² / (m² + 1).
    let (n, d, m) = (150, 256, 1.0);
    let v: Vec<Vec<f64>> = (0..n)
        .map(|i| randn(&[d], 500 + i as u64).into_data().into_iter().map(|x| x + m).collect())
        .collect();
    let s = constant_collapse_score(&v).unwrap();
    assert!((s.raw - m * m / (m * m + 1.0)).abs() < 0.02, "{}", s.raw);
}
