use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::Session;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
/// Vocabulary slot of the "no cue word" symbol, so it has an embedding.
pub const EPT: usize = 4;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const EPT_TOKEN: &str = "<ept>";

pub const RESERVED: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, EPT_TOKEN];

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}

/// Word ↔ index map. Indices `0..RESERVED.len()` hold the special symbols;
/// corpus words follow in descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !is_reserved(&w) {
                tokens.push(w);
            }
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    /// Index of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Replaces out-of-vocabulary tokens by `<unk>`.
    pub fn normalize(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| if self.contains(t) { t.clone() } else { UNK_TOKEN.to_string() })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::format(path.display().to_string(), "vocabulary must start with the reserved symbols"));
        }
        Ok(Self::from_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string())))
    }
}

/// Words occurring at least `min_freq` times get their own index.
pub fn build_vocab(sessions: &[Session], min_freq: u64) -> Vocab {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in sessions {
        for u in &s.utterances {
            for t in u.iter() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !is_reserved(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
}
