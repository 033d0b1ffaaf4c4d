//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "SPRLCKPT"
//! version   u32
//! digest    32 bytes SHA-256 of the architecture keys
//! step      u64
//! kind      u8       0 pre-training, 1 fine-tuning
//! config    u32 length + UTF-8 text (the fully resolved configuration)
//! count     u32
//! count ×   u32 name length + name, u8 dtype, u32 rank, rank × u64 extents,
//!           little-endian element data
//! ```
//! All integers are little-endian. Tensors are written in name order.

use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::numerics::{DType, ParamSet, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SPRLCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Prefix of teacher entries in a pre-training checkpoint.
pub const TEACHER_PREFIX: &str = "teacher.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Pretrain = 0,
    Finetune = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: CheckpointKind,
    pub step: u64,
    pub digest: [u8; 32],
    pub config_text: String,
    pub tensors: ParamSet<T>,
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        version: FORMAT_VERSION,
        detail: detail.into(),
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(kind: CheckpointKind, step: u64, config: &Config, tensors: ParamSet<T>) -> Self {
        Self {
            kind,
            step,
            digest: config.architecture_digest(),
            config_text: config.to_text(),
            tensors,
        }
    }

    /// The stored configuration, parsed and validated.
    pub fn config(&self) -> Result<Config> {
        Config::parse(&self.config_text)
    }

    /// Fails unless `config` describes the same architecture as this checkpoint.
    pub fn check_architecture(&self, config: &Config) -> Result<()> {
        if self.digest != config.architecture_digest() {
            return Err(Error::config(
                "model",
                "checkpoint was written for a different architecture",
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE as u8);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Parses a checkpoint; tensors stored at another precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint {
                version,
                detail: format!("unsupported format; this build reads v{FORMAT_VERSION}"),
            });
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let kind = match r.u8()? {
            0 => CheckpointKind::Pretrain,
            1 => CheckpointKind::Finetune,
            k => return Err(corrupt(format!("unknown checkpoint kind {k}"))),
        };
        let len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("config text is not UTF-8"))?;
        let count = r.u32()?;
        let mut tensors = ParamSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let dtype = DType::from_tag(r.u8()?).ok_or_else(|| corrupt(format!("`{name}`: unknown dtype")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| corrupt(format!("`{name}`: extents overflow")))?;
            let raw = r.take(
                numel
                    .checked_mul(dtype.size())
                    .ok_or_else(|| corrupt(format!("`{name}`: extents overflow")))?,
            )?;
            let data: Vec<T> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
            };
            if tensors.contains(&name) {
                return Err(corrupt(format!("duplicate tensor `{name}`")));
            }
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            kind,
            step,
            digest,
            config_text,
            tensors,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ckpt.to_bytes())?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
        version: FORMAT_VERSION,
        detail: format!("{}: {e}", path.display()),
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let cfg = Config::default();
        let params = crate::model::build::<f32>(&cfg.model, 3).unwrap();
        Checkpoint::new(CheckpointKind::Pretrain, 42, &cfg, params)
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let b = c.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&b).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), b);
    }

    #[test]
    fn bad_headers_are_versioned_errors() {
        let mut b = sample().to_bytes();
        b[8] = 9;
        match Checkpoint::<f32>::from_bytes(&b) {
            Err(Error::Checkpoint { version: 9, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&b), Err(Error::Checkpoint { version: 1, .. })));
        let b = sample().to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn widening_load_preserves_values() {
        let c = sample();
        let wide = Checkpoint::<f64>::from_bytes(&c.to_bytes()).unwrap();
        for (name, t) in c.tensors.iter() {
            let w = wide.tensors.get(name).unwrap();
            assert!(t.data().iter().zip(w.data()).all(|(&a, &b)| a as f64 == b));
        }
    }
}
