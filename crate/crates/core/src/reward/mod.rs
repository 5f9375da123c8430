//! Effectiveness and relevance rewards, their blend and discounted returns.

mod dual;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::ops::cosine;

pub use dual::{train_dual_encoder, DualEncoder, DualEncoderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 0.2,
            gamma: 0.9,
            epsilon: 1e-6,
        }
    }
}

impl RewardWeights {
    /// `alpha` may sit on either end of `[0, 1]` so the single-reward
    /// ablations are expressible.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Error::Config {
            key: format!("reward.{key}"),
            message: message.into(),
        };
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(bad("alpha", "must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(bad("gamma", "must lie in (0, 1]"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(bad("epsilon", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: f64,
    pub r: f64,
}

impl RewardBreakdown {
    pub fn new(r1: f64, r2: f64, weights: &RewardWeights) -> Self {
        RewardBreakdown {
            r1,
            r2,
            r: combine(r1, r2, weights),
        }
    }
}

/// Highest cosine between `word` and any token of `sentence`.
pub fn greedy_match(word: &str, sentence: &[String], table: &EmbeddingTable) -> Result<f64> {
    if sentence.is_empty() {
        return Err(Error::Argument("greedy match against an empty sentence".into()));
    }
    let w = table.lookup(word);
    Ok(sentence
        .iter()
        .map(|t| cosine(w, table.lookup(t)))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `ln(clamp(gm(cue, reply)) · clamp(gm(cue, prev)))`, each factor clamped
/// to `[epsilon, 1]`. An empty sentence counts as a zero match.
pub fn effectiveness(cue: &str, reply: &[String], prev: &[String], table: &EmbeddingTable, epsilon: f64) -> f64 {
    let factor = |s: &[String]| greedy_match(cue, s, table).unwrap_or(0.0).clamp(epsilon, 1.0);
    (factor(reply) * factor(prev)).ln()
}

pub trait RelevanceScorer: Send + Sync {
    /// Score in `[0, 1]` of `reply` as an answer to `context`.
    fn score(&self, reply: &[String], context: &[Vec<String>]) -> f64;
}

/// Training-free scorer: symmetric greedy matching against each context
/// utterance, averaged and mapped from `[-1, 1]` to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct EmbeddingScorer {
    table: Arc<EmbeddingTable>,
}

impl EmbeddingScorer {
    pub fn new(table: Arc<EmbeddingTable>) -> Self {
        EmbeddingScorer { table }
    }
}

fn one_way(from: &[String], to: &[String], table: &EmbeddingTable) -> f64 {
    from.iter()
        .map(|w| greedy_match(w, to, table).expect("non-empty"))
        .sum::<f64>()
        / from.len() as f64
}

/// Mean of the two directional greedy-matching averages.
pub fn symmetric_match(a: &[String], b: &[String], table: &EmbeddingTable) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    0.5 * (one_way(a, b, table) + one_way(b, a, table))
}

impl RelevanceScorer for EmbeddingScorer {
    fn score(&self, reply: &[String], context: &[Vec<String>]) -> f64 {
        let context: Vec<&Vec<String>> = context.iter().filter(|u| !u.is_empty()).collect();
        if reply.is_empty() || context.is_empty() {
            return 0.0;
        }
        let mean = context.iter().map(|u| symmetric_match(reply, u, &self.table)).sum::<f64>() / context.len() as f64;
        ((mean + 1.0) / 2.0).clamp(0.0, 1.0)
    }
}

pub fn relevance(reply: &[String], context: &[Vec<String>], scorer: &dyn RelevanceScorer) -> f64 {
    scorer.score(reply, context).clamp(0.0, 1.0)
}

/// `α·r1 + (1−α)·r2`.
pub fn combine(r1: f64, r2: f64, weights: &RewardWeights) -> f64 {
    weights.alpha * r1 + (1.0 - weights.alpha) * r2
}

/// `Σ_k γ^k · r_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Which relevance scorer to use, as written in the config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScorerSpec {
    Embedding,
    DualEncoder(std::path::PathBuf),
}

impl std::str::FromStr for ScorerSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "embedding" {
            Ok(ScorerSpec::Embedding)
        } else if let Some(path) = s.strip_prefix("dual_encoder:") {
            Ok(ScorerSpec::DualEncoder(path.into()))
        } else {
            Err(Error::Config {
                key: "reward.scorer".into(),
                message: format!("expected `embedding` or `dual_encoder:<path>`, got `{s}`"),
            })
        }
    }
}

/// Frozen reward machinery used during rollouts and simulation.
#[derive(Clone)]
pub struct RewardModel {
    pub table: Arc<EmbeddingTable>,
    pub scorer: Arc<dyn RelevanceScorer>,
    pub weights: RewardWeights,
}

impl RewardModel {
    pub fn with_embedding_scorer(table: EmbeddingTable, weights: RewardWeights) -> Self {
        let table = Arc::new(table);
        RewardModel {
            scorer: Arc::new(EmbeddingScorer::new(table.clone())),
            table,
            weights,
        }
    }

    /// Rewards for `reply`, generated for cue word `cue` after `context`
    /// (oldest first; the last entry is the utterance being answered).
    pub fn score(&self, cue: &str, reply: &[String], context: &[Vec<String>]) -> RewardBreakdown {
        let prev: &[String] = context.last().map(Vec::as_slice).unwrap_or(&[]);
        let r1 = effectiveness(cue, reply, prev, &self.table, self.weights.epsilon);
        let r2 = relevance(reply, context, self.scorer.as_ref());
        RewardBreakdown::new(r1, r2, &self.weights)
    }
}
