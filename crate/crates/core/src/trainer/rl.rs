use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingInstance;
use crate::dialogue::Conversation;
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::nn::ops::entropy;
use crate::nn::{adam_step, AdamConfig, AdamState, Gradients};
use crate::policy::DialogueState;
use crate::reward::{discounted_return, RewardBreakdown, RewardModel};
use crate::rng::{rng_from, Choice, Rng};

use super::ordered_sum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// Simulated turns per rollout.
    pub turns: usize,
    /// Rollouts per dialogue position.
    pub samples: usize,
    pub lr: f64,
    pub iterations: usize,
    pub checkpoint_every: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            turns: 3,
            samples: 5,
            lr: 1e-3,
            iterations: 1000,
            checkpoint_every: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Error::Config {
            key: format!("rl.{key}"),
            message: message.into(),
        };
        if self.turns == 0 {
            return Err(bad("turns", "must be at least 1"));
        }
        if self.samples < 2 {
            return Err(bad("samples", "must be at least 2 for the baseline"));
        }
        if !(self.lr > 0.0) {
            return Err(bad("lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub state: DialogueState,
    pub action: usize,
    pub utterance: Vec<String>,
    pub reward: RewardBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: DialogueState,
    pub steps: Vec<TrajectoryStep>,
    pub ret: f64,
    /// Policy entropy at the initial state.
    pub entropy: f64,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward.r).collect()
    }
}

/// Self-play from the instance's context for exactly `turns` turns. Cue
/// words are sampled, replies decoded greedily.
pub fn rollout(
    inst: &TrainingInstance,
    bundle: &ModelBundle,
    rewards: &RewardModel,
    turns: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let mut conv = Conversation::from_instance(bundle, inst)?;
    let mut steps = Vec::with_capacity(turns);
    let mut entropy_at_start = 0.0;
    for k in 0..turns {
        let turn = conv.step(&mut Choice::Sample(rng), &mut Choice::Greedy, Some(rewards))?;
        if k == 0 {
            entropy_at_start = entropy(&turn.distribution);
        }
        steps.push(TrajectoryStep {
            state: turn.state,
            action: turn.cue,
            utterance: turn.tokens,
            reward: turn.reward.expect("rewards requested"),
        });
    }
    let rs: Vec<f64> = steps.iter().map(|s| s.reward.r).collect();
    Ok(Trajectory {
        initial: steps[0].state.clone(),
        ret: discounted_return(&rs, rewards.weights.gamma),
        steps,
        entropy: entropy_at_start,
    })
}

pub fn mean_return(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        0.0
    } else {
        returns.iter().sum::<f64>() / returns.len() as f64
    }
}

/// For each sample, the mean return of the other samples. Scoring a sample
/// against a mean that excludes it keeps the estimator unbiased.
pub fn leave_one_out_baselines(returns: &[f64]) -> Vec<f64> {
    let n = returns.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let total: f64 = returns.iter().sum();
    returns.iter().map(|g| (total - g) / (n - 1) as f64).collect()
}

fn sample_rollouts(
    inst: &TrainingInstance,
    bundle: &ModelBundle,
    rewards: &RewardModel,
    turns: usize,
    samples: usize,
    seed: u64,
    path: &[u64],
) -> Result<Vec<Trajectory>> {
    (0..samples)
        .into_par_iter()
        .map(|m| {
            let mut p = path.to_vec();
            p.push(m as u64);
            rollout(inst, bundle, rewards, turns, &mut rng_from(seed, &p))
        })
        .collect()
}

/// Mean return of `samples` independent rollouts from the instance's state.
pub fn baseline(
    inst: &TrainingInstance,
    bundle: &ModelBundle,
    rewards: &RewardModel,
    turns: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let trajs = sample_rollouts(inst, bundle, rewards, turns, samples, seed, &[])?;
    Ok(mean_return(&trajs.iter().map(|t| t.ret).collect::<Vec<_>>()))
}

/// One scored first action from a dialogue state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub query: Vec<usize>,
    pub history: Vec<usize>,
    pub action: usize,
    pub advantage: f64,
}

/// Mean over samples of `advantage · ∇(−ln p(action | state))`, restricted
/// to policy parameters. Descending it ascends the expected return.
pub fn policy_gradient(bundle: &ModelBundle, samples: &[PolicySample]) -> Result<Gradients> {
    let store = &bundle.store;
    let gen = &bundle.generator;
    let policy = &bundle.policy;
    let parts: Vec<Gradients> = samples
        .par_iter()
        .map(|s| -> Result<Gradients> {
            let mut grads = store.gradients();
            if s.advantage == 0.0 {
                return Ok(grads);
            }
            let topic = policy.topic_traced(store, gen, &s.history)?;
            let state = DialogueState {
                context: gen.encode(store, &s.query).h1,
                topic: topic.state.h.clone(),
            };
            let trace = policy.distribution_traced(store, &state)?;
            let (_, d_topic) = policy.backward_action(store, &trace, s.action, s.advantage, &mut grads);
            policy.backward_topic(store, gen, &topic, &d_topic, &mut grads, false);
            Ok(grads)
        })
        .collect::<Result<_>>()?;
    let mut total = ordered_sum(parts, store.gradients());
    total.retain(&policy.params());
    if !samples.is_empty() {
        total.scale(1.0 / samples.len() as f64);
    }
    Ok(total)
}

/// Applies one Adam step on the policy parameters. Returns false (and
/// leaves every parameter untouched) when all advantages are zero or the
/// gradient is not finite.
pub fn policy_gradient_step(bundle: &mut ModelBundle, samples: &[PolicySample], adam: &mut AdamState) -> Result<bool> {
    if samples.iter().all(|s| s.advantage == 0.0) {
        return Ok(false);
    }
    let grads = policy_gradient(bundle, samples)?;
    if let Err(e) = grads.check_finite(&bundle.store) {
        log::warn!("skipping policy update: {e}");
        return Ok(false);
    }
    bundle.store.accumulate(&grads, 1.0);
    adam_step(&mut bundle.store, adam)?;
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlIterationLog {
    pub iter: usize,
    pub mean_return: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
    pub policy_entropy: f64,
}

/// Visits dialogue positions in per-epoch shuffled order; at each one runs
/// `samples` rollouts, baselines them and updates the policy.
pub fn train_rl<F>(
    bundle: &mut ModelBundle,
    instances: &[TrainingInstance],
    rewards: &RewardModel,
    config: &RlConfig,
    seed: u64,
    mut on_iteration: F,
) -> Result<()>
where
    F: FnMut(&RlIterationLog, &ModelBundle) -> Result<()>,
{
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::Argument("no training instances for reinforcement learning".into()));
    }
    let mut adam = AdamState::new(&bundle.store, bundle.policy_params(), AdamConfig::with_lr(config.lr));
    let n = instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    for iter in 0..config.iterations {
        if iter % n == 0 {
            order.sort_unstable();
            order.shuffle(&mut rng_from(seed, &[0, (iter / n) as u64]));
        }
        let inst = &instances[order[iter % n]];
        let trajs = sample_rollouts(inst, bundle, rewards, config.turns, config.samples, seed, &[1, iter as u64])?;
        let returns: Vec<f64> = trajs.iter().map(|t| t.ret).collect();
        let baselines = leave_one_out_baselines(&returns);
        let prepared = bundle.prepare(inst);
        let samples: Vec<PolicySample> = trajs
            .iter()
            .zip(&baselines)
            .map(|(t, b)| PolicySample {
                query: prepared.query.clone(),
                history: prepared.history.clone(),
                action: t.steps[0].action,
                advantage: t.ret - b,
            })
            .collect();
        policy_gradient_step(bundle, &samples, &mut adam)?;

        let steps = trajs.iter().flat_map(|t| &t.steps);
        let count = (trajs.len() * config.turns) as f64;
        let log = RlIterationLog {
            iter: iter + 1,
            mean_return: mean_return(&returns),
            mean_r1: steps.clone().map(|s| s.reward.r1).sum::<f64>() / count,
            mean_r2: steps.map(|s| s.reward.r2).sum::<f64>() / count,
            policy_entropy: trajs[0].entropy,
        };
        on_iteration(&log, bundle)?;
    }
    Ok(())
}
