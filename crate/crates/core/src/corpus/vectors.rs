use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::seeded;

use super::vocab::{is_reserved, Vocab, UNK_TOKEN};
use super::Session;

/// Fixed-dimension word vectors used by the rewards and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    zero: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
            zero: vec![0.0; dim],
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(Error::dim("embedding vector", self.dim, vector.len()));
        }
        match self.index.get(&word) {
            Some(&i) => self.vectors[i] = vector,
            None => {
                self.index.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.vectors.push(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }

    /// Vector for `word`. Unknown words fall back to the `<unk>` vector;
    /// special symbols without an entry (and unknown words when there is no
    /// `<unk>` entry) get the zero vector.
    pub fn lookup(&self, word: &str) -> &[f64] {
        if let Some(v) = self.get(word) {
            return v;
        }
        if is_reserved(word) {
            return &self.zero;
        }
        self.get(UNK_TOKEN).unwrap_or(&self.zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in self.iter() {
            out.push_str(w);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parses "word v1 … vd" lines. With `expected_dim` set, any other
    /// width is a format error; otherwise the first line fixes it.
    pub fn parse(text: &str, expected_dim: Option<usize>, origin: &str) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = expected_dim.map(EmbeddingTable::new);
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(origin, format!("line {}: {e}", n + 1)))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            if values.len() != t.dim {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected {} values, found {}", n + 1, t.dim, values.len()),
                ));
            }
            t.insert(word, values)?;
        }
        Ok(table.unwrap_or_else(|| EmbeddingTable::new(0)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?, expected_dim, &path.display().to_string())
    }
}

#[derive(Clone, Debug)]
pub struct SgnsConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 32,
            epochs: 5,
            window: 2,
            negatives: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::nn::ops::sigmoid(x)
}

/// Skip-gram with negative sampling over every utterance. Words are mapped
/// through `vocab` (rare words train the `<unk>` vector). Emitted vectors are
/// the L2-normalised sum of input and output vectors.
pub fn train_word_vectors(sessions: &[Session], vocab: &Vocab, config: &SgnsConfig) -> EmbeddingTable {
    let dim = config.dim;
    let n = vocab.len();
    let corpus: Vec<Vec<usize>> = sessions
        .iter()
        .flat_map(|s| s.utterances.iter().map(|u| vocab.encode(u)))
        .collect();
    let mut counts = vec![0u64; n];
    for u in &corpus {
        for &w in u {
            counts[w] += 1;
        }
    }

    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &c in &counts {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }

    let mut rng = seeded(config.seed);
    let mut input: Vec<f64> = (0..n * dim).map(|_| (rng.gen::<f64>() - 0.5) / dim as f64).collect();
    let mut output = vec![0.0; n * dim];
    let mut grad = vec![0.0; dim];

    let pairs_per_epoch: usize = corpus
        .iter()
        .map(|u| (0..u.len()).map(|p| p.min(config.window) + (u.len() - 1 - p).min(config.window)).sum::<usize>())
        .sum();
    let total = (pairs_per_epoch * config.epochs).max(1) as f64;
    let mut done = 0usize;

    if acc > 0.0 {
        for _ in 0..config.epochs {
            for u in &corpus {
                for (p, &center) in u.iter().enumerate() {
                    let lo = p.saturating_sub(config.window);
                    let hi = (p + config.window).min(u.len() - 1);
                    for q in lo..=hi {
                        if q == p {
                            continue;
                        }
                        let lr = config.learning_rate * (1.0 - done as f64 / total).max(1e-4);
                        done += 1;
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        let ci = center * dim;
                        for k in 0..=config.negatives {
                            let (target, label) = if k == 0 {
                                (u[q], 1.0)
                            } else {
                                let x = rng.gen::<f64>() * acc;
                                let t = cumulative.partition_point(|&c| c <= x).min(n - 1);
                                if t == u[q] {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let ti = target * dim;
                            let dot: f64 = (0..dim).map(|d| input[ci + d] * output[ti + d]).sum();
                            let g = (label - sigmoid(dot)) * lr;
                            for d in 0..dim {
                                grad[d] += g * output[ti + d];
                                output[ti + d] += g * input[ci + d];
                            }
                        }
                        for d in 0..dim {
                            input[ci + d] += grad[d];
                        }
                    }
                }
            }
        }
    }

    let mut table = EmbeddingTable::new(dim);
    for w in 0..n {
        if counts[w] == 0 {
            continue;
        }
        let mut v: Vec<f64> = (0..dim).map(|d| input[w * dim + d] + output[w * dim + d]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        table.insert(vocab.token(w), v).expect("dimension fixed");
    }
    table
}
