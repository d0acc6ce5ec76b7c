//! Deterministic engine for small fully connected classifiers.

mod io;
mod loss;
mod mlp;
mod train;

pub use io::{load_model, read_model, save_model, write_model};
pub use loss::{argmax, cross_entropy, entropy, kl_loss, softmax_t, PROB_FLOOR};
pub use mlp::{architecture, validate_architecture, Activation, Dense, DropoutMask, Gradients, LayerSpec, Mlp};
pub use train::{
    backward, batch_objective, evaluate, grad_norms, per_sample_grad_norms, train, Batch, Evaluation, GradNorms,
    LossKind, Optimizer, Targets, TrainConfig, TrainData, TrainOutcome,
};

pub(crate) use loss::{check_temperature, ln_floor};
pub(crate) use mlp::softmax_rows;
pub(crate) use train::{train_excluding, EVAL_CHUNK};
