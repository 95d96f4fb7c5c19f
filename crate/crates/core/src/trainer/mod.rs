//! Loss, Adam, the learning-rate schedule, the training loop and gradient
//! checks.

mod data;
mod gradcheck;
mod optim;
mod train;

pub use data::{eval_branch_seed, magnitude_std, prepare, reconstruct, score, train_branch_seed, Prepared};
pub use gradcheck::{grad_check, loss_difference, GradCheck, FD_STEP};
pub use optim::{adam_step, learning_rate, loss, AdamState, Loss, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    evaluate, initial_params, loss_and_grad, train, train_from, zero_output_layer, EpochMetrics, TrainConfig,
    TrainOutcome,
};

#[cfg(test)]
mod tests;
