//! Trainable fusion head over frozen audio and text embeddings.
//!
//! ```text
//! ha  = relu(W_a · h_a + b_a)        (d)
//! ht  = relu(W_t · h_t + b_t)        (d)
//! hat = ha ⊙ ht                      (d)
//! y   = sigmoid(w_out · hat + b_out)
//! ```
//!
//! The encoders only exist as stored vectors, so nothing upstream of the
//! head can be trained. Parameters are kept in one flat buffer in the order
//! `W_a, b_a, W_t, b_t, w_out, b_out` (row-major weights), which is also the
//! checkpoint order; gradients and optimizer moments share the layout.

mod checkpoint;
pub mod gradcheck;
mod head;
mod optim;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use head::{bce_loss, relu, sigmoid, FusionHead, ForwardPass, Gradients, Prediction, BCE_CLAMP};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use train::{
    calibrate_threshold, evaluate_f1, predict_pairs, read_log, train, write_log, EpochLog, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("{what} dimension mismatch: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("hidden size and input dimensions must be positive")]
    ZeroSize,
    #[error("parameter buffer has {got} entries, head needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("forward cache does not belong to this head")]
    StaleCache,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training split has a single class ({positives} hallucinated of {total})")]
    SingleClass { positives: usize, total: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FusionError>;
