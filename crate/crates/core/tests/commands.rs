use std::path::Path;

use sha2::{Digest, Sha256};
use spiral_core::audio::read_manifest;
use spiral_core::checkpoint::{load_checkpoint, save_checkpoint};
use spiral_core::config::Config;
use spiral_core::ctc::Vocabulary;
use spiral_core::run::{self, OutputDir};

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn small(extra: &str) -> Config {
    Config::parse(&format!(
        "precision = f64\npretrain.steps = 4\npretrain.batch_size = 2\nfinetune.steps = 3\nfinetune.batch_size = 2\nrun.log_every = 1\n{extra}"
    ))
    .unwrap()
}

#[test]
fn synth_corpus_is_deterministic_and_in_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::default();
    let a = run::synth_corpus(&cfg, 5, &dir.path().join("a")).unwrap();
    let b = run::synth_corpus(&cfg, 5, &dir.path().join("b")).unwrap();
    let read = |p: &Path| std::fs::read_to_string(p).unwrap().replace(p.parent().unwrap().to_str().unwrap(), "");
    assert_eq!(read(&a), read(&b));
    for (x, y) in read_manifest(&a).unwrap().iter().zip(read_manifest(&b).unwrap()) {
        assert_eq!(x.load().unwrap(), y.load().unwrap());
    }
    let vocab = Vocabulary::characters();
    for r in read_manifest(&a).unwrap() {
        assert!((3..=12).contains(&r.transcript.len()));
        assert!(vocab.contains_all(&r.transcript));
    }
    let one = run::synth_corpus(&cfg, 1, &dir.path().join("one")).unwrap();
    assert_eq!(read_manifest(&one).unwrap().len(), 1);
    assert!(run::synth_corpus(&cfg, 0, &dir.path().join("zero")).is_err());
}

#[test]
fn output_directory_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let held = OutputDir::lock(dir.path()).unwrap();
    let err = OutputDir::lock(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    drop(held);
    OutputDir::lock(dir.path()).unwrap();
}

#[test]
fn commands_rerun_from_their_saved_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small("");
    let manifest = run::synth_corpus(&cfg, 8, &d.join("corpus")).unwrap();
    run::pretrain(&cfg, &manifest, None, &d.join("pt1")).unwrap();

    let run_json: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("pt1/run.json")).unwrap()).unwrap();
    assert_eq!(run_json["seed"], cfg.seed);
    assert_eq!(run_json["config"]["ema.alpha_start"], "0.995");
    let saved = Config::load(Some(&d.join("pt1/config.txt")), &[]).unwrap();
    assert_eq!(saved, cfg);
    run::pretrain(&saved, &manifest, None, &d.join("pt2")).unwrap();
    assert_eq!(digest(&d.join("pt1/metrics.jsonl")), digest(&d.join("pt2/metrics.jsonl")));
    assert_eq!(digest(&d.join("pt1/final.ckpt")), digest(&d.join("pt2/final.ckpt")));

    let init = d.join("pt1/final.ckpt");
    for out in ["ft1", "ft2"] {
        run::finetune(&cfg, Some(&init), &manifest, None, &d.join(out)).unwrap();
    }
    assert_eq!(digest(&d.join("ft1/metrics.jsonl")), digest(&d.join("ft2/metrics.jsonl")));

    let r1 = run::eval(&d.join("ft1/final.ckpt"), &manifest, &d.join("eval1.jsonl")).unwrap();
    run::eval(&d.join("ft1/final.ckpt"), &manifest, &d.join("eval2.jsonl")).unwrap();
    assert_eq!(r1.utterances.len(), 8);
    assert_eq!(digest(&d.join("eval1.jsonl")), digest(&d.join("eval2.jsonl")));

    for out in ["aug1", "aug2"] {
        run::augment(&cfg, &manifest, None, &d.join(out)).unwrap();
    }
    assert_eq!(digest(&d.join("aug1/features.jsonl")), digest(&d.join("aug2/features.jsonl")));
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for precision in ["f32", "f64"] {
        let cfg = small(&format!("precision = {precision}\npretrain.steps = 2"));
        let manifest = run::synth_corpus(&cfg, 4, &d.join(format!("c{precision}"))).unwrap();
        let s = run::pretrain(&cfg, &manifest, None, &d.join(format!("p{precision}"))).unwrap();
        let again = d.join(format!("again-{precision}.ckpt"));
        match precision {
            "f32" => save_checkpoint(&again, &load_checkpoint::<f32>(&s.checkpoint).unwrap()).unwrap(),
            _ => save_checkpoint(&again, &load_checkpoint::<f64>(&s.checkpoint).unwrap()).unwrap(),
        }
        assert_eq!(std::fs::read(&s.checkpoint).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn diagnose_reports_probe_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small("pretrain.steps = 1");
    let manifest = run::synth_corpus(&cfg, 40, &d.join("corpus")).unwrap();
    let s = run::pretrain(&cfg, &manifest, None, &d.join("pt")).unwrap();
    let r = run::diagnose(&s.checkpoint, &manifest, None, &d.join("diag.json")).unwrap();
    assert!((0.0..=1.0).contains(&r.position_probe_acc));
    assert!((0.0..=1.0).contains(&r.content_probe_acc));
    assert_eq!(r.position_chance, 0.25);
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("diag.json")).unwrap()).unwrap();
    assert_eq!(written["frames"], r.frames);
}

#[test]
fn eval_rejects_pretraining_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small("pretrain.steps = 1");
    let manifest = run::synth_corpus(&cfg, 4, &d.join("corpus")).unwrap();
    let s = run::pretrain(&cfg, &manifest, None, &d.join("pt")).unwrap();
    assert_eq!(run::eval(&s.checkpoint, &manifest, &d.join("e.jsonl")).unwrap_err().exit_code(), 3);
}
