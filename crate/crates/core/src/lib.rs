//! Self-supervised speech pre-training with an EMA teacher and an in-utterance
//! contrastive objective, plus CTC fine-tuning and collapse diagnostics.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod ctc;
pub mod diagnostics;
mod error;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod rng;
pub mod run;
pub mod spiral;

pub use error::{Error, Result};
