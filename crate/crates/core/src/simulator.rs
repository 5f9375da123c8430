//! Test-time self-play with dull / overlap / max-turn termination.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TrainingInstance, Vocab};
use crate::dialogue::Conversation;
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::reward::RewardModel;
use crate::rng::{rng_from, Choice};

/// Ten generic replies used when no dull list is supplied.
pub const DEFAULT_DULL: [&str; 10] = [
    "whatever",
    "i don't know",
    "i do not know",
    "ok",
    "okay",
    "me too",
    "haha",
    "i see",
    "yes",
    "no",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub max_turns: usize,
    pub overlap_threshold: f64,
    /// Also compare each utterance with the one two turns back.
    pub gap_check: bool,
    /// Sample replies instead of greedy decoding.
    pub sample_replies: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            max_turns: 10,
            overlap_threshold: 0.8,
            gap_check: false,
            sample_replies: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Config {
                key: "simulation.max_turns".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config {
                key: "simulation.overlap_threshold".into(),
                message: "must lie in (0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// Blacklisted utterances, compared after mapping rare words to `<unk>`.
#[derive(Clone, Debug, Default)]
pub struct DullSet {
    entries: HashSet<Vec<String>>,
    vocab: Option<Vocab>,
}

impl DullSet {
    pub fn new(entries: impl IntoIterator<Item = Vec<String>>, vocab: Option<&Vocab>) -> Self {
        let vocab = vocab.cloned();
        let entries = entries
            .into_iter()
            .map(|e| match &vocab {
                Some(v) => v.normalize(&e),
                None => e,
            })
            .collect();
        DullSet { entries, vocab }
    }

    /// One whitespace-tokenised sentence per line; blank lines ignored.
    pub fn parse(text: &str, vocab: Option<&Vocab>) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .filter(|t| !t.is_empty()),
            vocab,
        )
    }

    pub fn load(path: &Path, vocab: Option<&Vocab>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(Self::parse(&std::fs::read_to_string(path)?, vocab))
    }

    pub fn default_set(vocab: Option<&Vocab>) -> Self {
        Self::parse(&DEFAULT_DULL.join("\n"), vocab)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn is_dull(utterance: &[String], dull: &DullSet) -> bool {
    match &dull.vocab {
        Some(v) => dull.entries.contains(&v.normalize(utterance)),
        None => dull.entries.contains(utterance),
    }
}

/// Size of the token multiset intersection over the shorter length.
pub fn overlap_ratio(a: &[String], b: &[String]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("overlap of an empty utterance".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in a {
        *counts.entry(t).or_default() += 1;
    }
    let mut shared = 0;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    Ok(shared as f64 / a.len().min(b.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Dull,
    Overlap,
    MaxTurns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedTurn {
    pub agent: String,
    pub cue: String,
    pub tokens: Vec<String>,
    pub r1: f64,
    pub r2: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationLog {
    pub seed: Vec<Vec<String>>,
    #[serde(default)]
    pub seed_cues: Vec<String>,
    pub turns: Vec<LoggedTurn>,
    pub reason: Termination,
}

impl ConversationLog {
    pub fn turn_count(&self) -> usize {
        self.turns.len()
    }
}

/// Termination check after a new utterance (the last of `generated`), in
/// order: dull, overlap with the previous generated utterance, max turns.
/// An empty utterance counts as dull.
pub fn check_termination(generated: &[Vec<String>], dull: &DullSet, config: &SimulationConfig) -> Option<Termination> {
    let last = generated.last()?;
    if last.is_empty() || is_dull(last, dull) {
        return Some(Termination::Dull);
    }
    let n = generated.len();
    let mut earlier = Vec::new();
    if n >= 2 {
        earlier.push(&generated[n - 2]);
    }
    if config.gap_check && n >= 3 {
        earlier.push(&generated[n - 3]);
    }
    for prev in earlier {
        if !prev.is_empty() && overlap_ratio(prev, last).unwrap_or(0.0) > config.overlap_threshold {
            return Some(Termination::Overlap);
        }
    }
    (n >= config.max_turns).then_some(Termination::MaxTurns)
}

pub fn agent_name(turn: usize) -> &'static str {
    if turn.is_multiple_of(2) {
        "A"
    } else {
        "B"
    }
}

/// Drives `respond` (called with the 0-based turn index) until a
/// termination rule fires.
pub fn run_dialogue<F>(
    seed: Vec<Vec<String>>,
    seed_cues: Vec<String>,
    dull: &DullSet,
    config: &SimulationConfig,
    mut respond: F,
) -> Result<ConversationLog>
where
    F: FnMut(usize) -> Result<LoggedTurn>,
{
    config.validate()?;
    let mut turns: Vec<LoggedTurn> = Vec::new();
    let mut generated: Vec<Vec<String>> = Vec::new();
    loop {
        let turn = respond(turns.len())?;
        generated.push(turn.tokens.clone());
        turns.push(turn);
        if let Some(reason) = check_termination(&generated, dull, config) {
            return Ok(ConversationLog {
                seed,
                seed_cues,
                turns,
                reason,
            });
        }
    }
}

/// Two agents sharing `bundle` take turns from the seed utterances. Cue
/// words are chosen greedily; replies greedily unless configured to sample
/// (then seeded by `seed`).
pub fn simulate(
    seed_utterances: Vec<Vec<String>>,
    seed_cues: Vec<usize>,
    bundle: &ModelBundle,
    rewards: &RewardModel,
    dull: &DullSet,
    config: &SimulationConfig,
    seed: u64,
) -> Result<ConversationLog> {
    let cue_words = seed_cues.iter().map(|&c| bundle.cues.word(c).to_string()).collect();
    let mut conv = Conversation::new(bundle, seed_utterances.clone(), seed_cues)?;
    let mut rng = rng_from(seed, &[]);
    run_dialogue(seed_utterances, cue_words, dull, config, |k| {
        let mut decode = if config.sample_replies { Choice::Sample(&mut rng) } else { Choice::Greedy };
        let turn = conv.step(&mut Choice::Greedy, &mut decode, Some(rewards))?;
        let r = turn.reward.expect("rewards requested");
        Ok(LoggedTurn {
            agent: agent_name(k).to_string(),
            cue: bundle.cues.word(turn.cue).to_string(),
            tokens: turn.tokens,
            r1: r.r1,
            r2: r.r2,
            r: r.r,
        })
    })
}

/// One simulation per instance, seeded with the instance's context.
pub fn simulate_instances(
    instances: &[TrainingInstance],
    bundle: &ModelBundle,
    rewards: &RewardModel,
    dull: &DullSet,
    config: &SimulationConfig,
    seed: u64,
) -> Result<Vec<ConversationLog>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let (older, newer) = inst.context_utterances();
            let utts = if older.is_empty() { vec![newer] } else { vec![older, newer] };
            let cues = bundle.cue_indices(&inst.history_cues);
            simulate(utts, cues, bundle, rewards, dull, config, crate::rng::derive_seed(seed, &[i as u64]))
        })
        .collect()
}

pub fn write_logs(path: &Path, logs: &[ConversationLog]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for log in logs {
        serde_json::to_writer(&mut w, log)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_logs(path: &Path) -> Result<Vec<ConversationLog>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", n + 1)))
        })
        .collect()
}
