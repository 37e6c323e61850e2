//! The three training stages: backbone pretraining, BC head training on a
//! 50/50 background/target stream, and joint classification training with
//! BC-mask supervision of the CAM branch.

pub mod augment;
mod config;
mod sgd;
mod stages;

pub use augment::{augment, AugmentToggles, AugmentedBatch, Transform, Window};
pub use config::{
    Precision, TrainConfig, PAPER_EPOCHS, PAPER_LR_BACKBONE, PAPER_LR_DECAY, PAPER_LR_HEAD, PAPER_LR_PERIOD,
};
pub use sgd::{collect_grads, Gradients, Sgd};
pub use stages::{
    accuracy, bc_draws, heldout_backgrounds, pretrain_backbone, train_bc, train_bcct, BcOutcome, JointOutcome,
    PretrainOutcome,
};

use serde::{Deserialize, Serialize};

/// `base * factor^floor(epoch / period)`.
pub fn lr_at(epoch: usize, base: f64, factor: f64, period: usize) -> f64 {
    base * factor.powi((epoch / period.max(1)) as i32)
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub cls_loss: f64,
    pub mask_loss: f64,
    /// `cls_loss + lambda_mask * mask_loss`, computed from the two logged values.
    pub total_loss: f64,
    pub wall_ms: u64,
    pub threads: usize,
}

/// Serializes a log as JSON Lines.
pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect()
}
