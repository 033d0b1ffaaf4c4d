use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::audio::{read_manifest, UtteranceRecord, Waveform};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::perturb::synth_noise_bank;

const LOCK_FILE: &str = ".lock";

/// A run's output directory, held exclusively until dropped.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    /// Creates `path` if needed and takes its lock; fails if another run holds it.
    pub fn lock(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path)?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path: path.to_path_buf() })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another run (remove {} if that run is gone)",
                path.display(),
                lock.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `run.json` (command, seed, resolved configuration, inputs) and the
    /// same configuration as `config.txt`, which re-runs the command when passed
    /// back with `--config`.
    pub fn write_run_json(&self, command: &str, cfg: &Config, inputs: serde_json::Value) -> Result<()> {
        let config: serde_json::Map<String, serde_json::Value> =
            cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
        let doc = json!({
            "command": command,
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "inputs": inputs,
            "config": config,
        });
        std::fs::write(self.path.join("run.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        std::fs::write(self.path.join("config.txt"), cfg.to_text())?;
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.path.join(LOCK_FILE));
    }
}

/// Append-only JSON-lines writer, flushed after every record.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Manifest records with their decoded audio.
pub fn load_utterances(manifest: &Path) -> Result<Vec<(UtteranceRecord, Waveform)>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let w = r.load()?;
            Ok((r, w))
        })
        .collect()
}

/// Noise clips listed in `manifest`, or a synthetic bank when none is given.
pub fn load_noise_bank(cfg: &Config, manifest: Option<&Path>) -> Result<Vec<Waveform>> {
    match manifest {
        Some(p) => Ok(load_utterances(p)?.into_iter().map(|(_, w)| w).collect()),
        None => Ok(synth_noise_bank(cfg.seed, cfg.noise.clips, cfg.noise.clip_samples)),
    }
}
