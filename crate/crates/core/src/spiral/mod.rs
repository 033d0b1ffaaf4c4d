//! Pre-training: EMA teacher, in-utterance contrastive loss, schedules and the
//! training step.

mod contrastive;
mod schedule;
mod train;

pub use contrastive::{contrastive_loss, contrastive_node, sample_distractors, ContrastiveConfig, ContrastiveOutput};
pub use schedule::{alpha_at, batch_indices, lr_pretrain, EmaSchedule};
pub use train::{ema_update, pretrain_step, PretrainConfig, PretrainState, StepMetrics, TrainUtterance};
