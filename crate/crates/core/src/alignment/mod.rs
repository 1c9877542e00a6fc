//! Similarities, alignment losses and the contrastive training loop.

mod losses;
mod train;

pub use losses::{
    cosine_similarity_matrix, info_nce, info_nce_loss, mse_alignment, mse_alignment_loss, UNIT_NORM_TOLERANCE,
};
pub use train::{train, train_with, EpochLog, LossKind, TrainConfig};
