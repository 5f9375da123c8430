//! A synthetic dialogue domain with known structure.
//!
//! Every ordinary utterance is `<mood> <item> is <category>`. A reply moves
//! to the next item and the next category in a fixed cycle, except that each
//! category has its own chance of being answered dully with
//! `whatever <item> <mood>`. Categories are the only content words, so they
//! become the cue words.

use std::path::Path;

use rand::Rng as _;

use crate::corpus::{write_sessions, Session, Utterance};
use crate::error::Result;
use crate::rng::rng_from;

pub const MOODS: [&str; 8] = ["well", "so", "hey", "oh", "yes", "right", "look", "now"];
pub const ITEMS: [&str; 12] = [
    "apple", "bread", "chair", "door", "egg", "fork", "glass", "hat", "ink", "jar", "key", "lamp",
];
pub const CATEGORIES: [&str; 8] = [
    "adventurous",
    "beautiful",
    "courageous",
    "delightful",
    "energetic",
    "fantastic",
    "gorgeous",
    "harmonious",
];
/// Probability that an utterance about category `k` is answered dully.
pub const DULL_RATE: [f64; 8] = [0.05, 0.3, 0.05, 0.3, 0.05, 0.3, 0.05, 0.8];
pub const DULL_REPLY: &str = "whatever";
const LINK: &str = "is";

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub sessions: usize,
    pub turns: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            sessions: 300,
            turns: 6,
            seed: 0,
        }
    }
}

fn utterance(mood: usize, item: usize, category: usize) -> Utterance {
    Utterance::new([MOODS[mood], ITEMS[item], LINK, CATEGORIES[category]])
}

fn dull_utterance(item: usize, mood: usize) -> Utterance {
    Utterance::new([DULL_REPLY, ITEMS[item], MOODS[mood]])
}

/// Every dull reply the domain can produce, one per line.
pub fn dull_text() -> String {
    let mut lines = Vec::new();
    for item in 0..ITEMS.len() {
        for mood in 0..MOODS.len() {
            lines.push(dull_utterance(item, mood).text());
        }
    }
    lines.join("\n") + "\n"
}

pub fn generate_sessions(config: &ToyConfig) -> Vec<Session> {
    (0..config.sessions)
        .map(|s| {
            let mut rng = rng_from(config.seed, &[s as u64]);
            let mut utterances = Vec::with_capacity(config.turns);
            // None after a dull turn: the next speaker opens a fresh topic.
            let mut topic: Option<(usize, usize)> = None;
            for _ in 0..config.turns {
                let mood = rng.gen_range(0..MOODS.len());
                match topic {
                    Some((item, cat)) if rng.gen::<f64>() < DULL_RATE[cat] => {
                        utterances.push(dull_utterance(item, mood));
                        topic = None;
                    }
                    Some((item, cat)) => {
                        let next = ((item + 1) % ITEMS.len(), (cat + 1) % CATEGORIES.len());
                        utterances.push(utterance(mood, next.0, next.1));
                        topic = Some(next);
                    }
                    None => {
                        let fresh = (rng.gen_range(0..ITEMS.len()), rng.gen_range(0..CATEGORIES.len()));
                        utterances.push(utterance(mood, fresh.0, fresh.1));
                        topic = Some(fresh);
                    }
                }
            }
            Session {
                id: format!("toy-{s}"),
                utterances,
            }
        })
        .collect()
}

/// Tagged lexicon: categories are adjectives, everything else is `OTHER`.
pub fn lexicon_text() -> String {
    let mut lines: Vec<String> = CATEGORIES.iter().map(|c| format!("{c}\tADJ")).collect();
    lines.extend(MOODS.iter().chain(&ITEMS).chain(&[LINK, DULL_REPLY]).map(|w| format!("{w}\tOTHER")));
    lines.join("\n") + "\n"
}

pub fn config_text(seed: u64) -> String {
    format!(
        r#"seed = {seed}
mode = "rlcw"

[paths]
corpus = "sessions.jsonl"
lexicon = "lexicon.tsv"
dull = "dull.txt"
out = "out"

[model]
embed = 16
hidden = 32

[data]
min_freq = 2

[vectors]
dim = 16
epochs = 5

[supervised]
batch = 16
lr = 0.01
epochs = 30

[rl]
turns = 3
samples = 5
lr = 0.01
iterations = 600

[simulation]
max_turns = 10
dialogues = 100
"#
    )
}

/// Writes `sessions.jsonl`, `lexicon.tsv`, `dull.txt` and `config.toml`
/// into `dir`.
pub fn write_toy_corpus(dir: &Path, config: &ToyConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_sessions(&dir.join("sessions.jsonl"), &generate_sessions(config))?;
    std::fs::write(dir.join("lexicon.tsv"), lexicon_text())?;
    std::fs::write(dir.join("dull.txt"), dull_text())?;
    std::fs::write(dir.join("config.toml"), config_text(config.seed))?;
    Ok(())
}
