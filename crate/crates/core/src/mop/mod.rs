//! Mixture-of-projectors alignment layer.
//!
//! `N` two-layer GeLU projectors map visual token embeddings (`c_in` wide)
//! into the language model's embedding space (`c_out` wide). A router MLP
//! scores the projectors per token; the `top_k` best are kept, their scores
//! are softmax-normalized, and the token's output is the weighted sum of the
//! selected projectors' outputs. During training the router input is
//! perturbed with Gaussian noise.

mod activation;
mod checkpoint;
mod config;
mod gradcheck;
mod layer;
mod loss;
mod matrix;
mod params;
mod router;
mod train;
mod utilization;

pub use activation::{gelu, gelu_grad};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Mode, MopConfig};
pub use gradcheck::{
    check_config, gradcheck, random_configs, relative_error, GradCheckCase, GradCheckReport,
    FD_STEP, REL_ERROR_FLOOR,
};
pub use layer::{
    backward_from_cache, forward_cached, mop_backward, mop_forward, projector_forward,
    ForwardCache, MopGrads,
};
pub use loss::{mse_with_grad, nll_loss, NllLoss};
pub use matrix::Matrix2D;
pub use params::{MopParams, ProjectorParams, RouterParams};
pub use router::{masked_softmax, route, router_logits, routing_noise, top_k_indices, RoutingDecision};
pub use train::{
    evaluate_mse, train_mop, write_loss_curve, Optimizer, SyntheticTask, TrainHyper,
    TrainOutcome, TrainPair,
};
pub use utilization::{router_utilization, RouterUtilization};

#[derive(Debug, thiserror::Error)]
pub enum MopError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("target {target} at position {position} is outside the vocabulary of size {vocab}")]
    TargetOutOfRange {
        position: usize,
        target: usize,
        vocab: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
