//! CTC fine-tuning: loss, greedy decoding, error rates and the fine-tuning loop.

mod decode;
mod finetune;
mod loss;
mod metrics;
mod vocab;

pub use decode::{best_path, collapse, greedy_decode};
pub use finetune::{
    evaluate, finetune_step, lr_finetune, EvalReport, FinetuneConfig, FinetuneMetrics, FinetuneMode, FinetuneState,
    LabelledUtterance, UtteranceResult, ENCODER_PREFIX,
};
pub use loss::{ctc_loss, ctc_loss_node, required_frames};
pub use metrics::{cer, edit_counts, edit_distance, error_rate, wer, EditCounts};
pub use vocab::{Vocabulary, BLANK};
