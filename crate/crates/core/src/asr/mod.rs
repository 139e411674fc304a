//! Character CTC finetuning of a pretrained model with a frozen feature
//! encoder.

mod augment;
mod ctc;
mod train;
mod vocab;

pub use augment::{feature_mask_augment, AugmentConfig};
pub use ctc::{ctc_loss, ctc_loss_var, min_frames};
pub use train::{emissions, finetune, finetune_step, finetune_trainable, head_log_probs, FinetuneConfig};
pub use vocab::{Vocabulary, BLANK, WORD_DELIMITER};
