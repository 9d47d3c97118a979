//! Policy networks and the differentiation core they train with.
//!
//! - [`tensor`]: dense tensors generic over `f32`/`f64`.
//! - [`tape`]: reverse-mode differentiation.
//! - [`params`]: named parameter store with running batch-norm statistics.
//! - [`policy`]: the CNN and MLP actor-critic networks and Gaussian heads.
//! - [`checkpoint`]: single-file archive of a trained policy.

use thiserror::Error;

pub mod checkpoint;
pub mod init;
pub mod params;
pub mod policy;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointMeta, CheckpointSpec};
pub use init::{init_params, orthogonal};
pub use params::{batchnorm2d_forward, gradients, BnRunning, Parameters, BN_MOMENTUM};
pub use policy::{
    forward, forward_eval, sample_action, CnnSpec, ForwardMode, ForwardOutput,
    GaussianPolicyOutput, MlpSpec, PolicySpec, LOG_STD_MAX, LOG_STD_MIN,
};
pub use tape::{gaussian_log_density, BnBatchStats, BnMode, Gradients, Tape, Var, BN_EPS};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("train-mode batch norm needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid policy spec: {0}")]
    Spec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
