use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_wav, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    Path(PathBuf),
    Samples(Waveform),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio: AudioSource,
    pub transcript: String,
    pub duration_s: f64,
}

impl UtteranceRecord {
    pub fn load(&self) -> Result<Waveform> {
        match &self.audio {
            AudioSource::Path(p) => read_wav(p),
            AudioSource::Samples(w) => Ok(w.clone()),
        }
    }
}

/// Parses a `id<TAB>audio_path<TAB>transcript` manifest. Relative audio paths are
/// resolved against the manifest's directory; the transcript may be empty.
pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(audio)) = (parts.next(), parts.next()) else {
            return Err(Error::Data(format!(
                "{}:{}: expected id<TAB>audio_path<TAB>transcript",
                path.display(),
                lineno + 1
            )));
        };
        let transcript = parts.next().unwrap_or("").to_string();
        let audio_path = base.join(audio);
        let duration_s = hound::WavReader::open(&audio_path)
            .map(|r| r.duration() as f64 / r.spec().sample_rate as f64)
            .map_err(|e| Error::Data(format!("{}: {e}", audio_path.display())))?;
        out.push(UtteranceRecord {
            id: id.to_string(),
            audio: AudioSource::Path(audio_path),
            transcript,
            duration_s,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: empty manifest", path.display())));
    }
    Ok(out)
}

/// Writes a manifest with audio paths relative to `base` where possible.
pub fn write_manifest(path: &Path, records: &[UtteranceRecord], base: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        let AudioSource::Path(p) = &r.audio else {
            return Err(Error::Data(format!("utterance {} has no audio file", r.id)));
        };
        let rel = p.strip_prefix(base).unwrap_or(p);
        writeln!(text, "{}\t{}\t{}", r.id, rel.display(), r.transcript).expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}
