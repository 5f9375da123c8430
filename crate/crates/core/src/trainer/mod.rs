//! Joint supervised pretraining and policy-gradient training.

mod rl;
mod supervised;

pub use rl::{
    baseline, leave_one_out_baselines, mean_return, policy_gradient, policy_gradient_step, rollout, train_rl, PolicySample,
    RlConfig, RlIterationLog, Trajectory, TrajectoryStep,
};
pub use supervised::{pretrain, supervised_loss, EpochReport, SupervisedConfig};

use crate::nn::Gradients;

/// Sums gradients in slice order so the result does not depend on how
/// they were scheduled.
pub(crate) fn ordered_sum(parts: Vec<Gradients>, mut into: Gradients) -> Gradients {
    for g in &parts {
        into.add(g);
    }
    into
}
