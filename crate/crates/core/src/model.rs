//! Generator + policy parameters with their vocabularies, saved as one
//! checkpoint with a `generator` and a `policy` section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{gold_index, CueVocab, TrainingInstance, Vocab};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorDims};
use crate::nn::{Checkpoint, ParamId, ParamStore};
use crate::policy::Policy;
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub topic_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed: 32,
            hidden: 64,
            topic_hidden: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub store: ParamStore,
    pub generator: Generator,
    pub policy: Policy,
    pub vocab: Vocab,
    pub cues: CueVocab,
    pub dims: ModelDims,
}

/// A training instance mapped to indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub query: Vec<usize>,
    pub history: Vec<usize>,
    pub gold: usize,
    pub reply: Vec<usize>,
}

impl ModelBundle {
    pub fn new(vocab: Vocab, cues: CueVocab, dims: ModelDims, cue_fusion: bool, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = seeded(seed);
        let cue_tokens = cues.words().iter().map(|w| vocab.id(w)).collect();
        let gdims = GeneratorDims {
            vocab: vocab.len(),
            embed: dims.embed,
            hidden: dims.hidden,
        };
        let mut generator = Generator::new(&mut store, gdims, cue_tokens, &mut rng);
        generator.cue_fusion = cue_fusion;
        let policy = Policy::new(&mut store, dims.embed, dims.hidden, dims.topic_hidden, cues.len(), &mut rng);
        ModelBundle {
            store,
            generator,
            policy,
            vocab,
            cues,
            dims,
        }
    }

    pub fn generator_params(&self) -> Vec<ParamId> {
        self.generator.params()
    }

    pub fn policy_params(&self) -> Vec<ParamId> {
        self.policy.params()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn cue_fusion(&self) -> bool {
        self.generator.cue_fusion
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        self.vocab.decode(ids)
    }

    pub fn cue_indices(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.cues.id(w).unwrap_or(crate::corpus::EPT_CUE)).collect()
    }

    pub fn prepare(&self, inst: &TrainingInstance) -> PreparedInstance {
        PreparedInstance {
            query: self.encode(&inst.query),
            history: self.cue_indices(&inst.history_cues),
            gold: gold_index(inst, &self.cues),
            reply: self.encode(&inst.reply),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("dims".into(), json!(self.dims));
        meta.insert("cue_fusion".into(), json!(self.cue_fusion()));
        meta.insert("vocab".into(), json!(self.vocab.tokens()));
        let cues: Vec<(&str, u64)> = (0..self.cues.len()).map(|i| (self.cues.word(i), self.cues.frequency(i))).collect();
        meta.insert("cues".into(), json!(cues));
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = |key: &str| {
            ckpt.meta
                .get(key)
                .cloned()
                .ok_or_else(|| Error::format("checkpoint", format!("missing meta field `{key}`")))
        };
        let bad = |key: &str, e: serde_json::Error| Error::format("checkpoint", format!("meta field `{key}`: {e}"));
        let dims: ModelDims = serde_json::from_value(field("dims")?).map_err(|e| bad("dims", e))?;
        let cue_fusion: bool = serde_json::from_value(field("cue_fusion")?).map_err(|e| bad("cue_fusion", e))?;
        let tokens: Vec<String> = serde_json::from_value(field("vocab")?).map_err(|e| bad("vocab", e))?;
        let cues: Vec<(String, u64)> = serde_json::from_value(field("cues")?).map_err(|e| bad("cues", e))?;
        let reserved = crate::corpus::vocab::RESERVED.len();
        if tokens.len() < reserved {
            return Err(Error::format("checkpoint", "vocabulary too short"));
        }
        let vocab = Vocab::from_tokens(tokens.into_iter().skip(reserved));
        let cues = CueVocab::from_entries(cues.into_iter().skip(1));
        let mut bundle = ModelBundle::new(vocab, cues, dims, cue_fusion, 0);
        ckpt.apply_to(&mut bundle.store)?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> ModelBundle {
        let vocab = Vocab::from_tokens(["hi", "there", "cat", "dog"].map(String::from));
        let cues = CueVocab::from_entries([("cat".to_string(), 3), ("dog".to_string(), 2)]);
        ModelBundle::new(vocab, cues, ModelDims { embed: 3, hidden: 4, topic_hidden: 2 }, true, 7)
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        b.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back.store, b.store);
        assert_eq!(back.vocab, b.vocab);
        assert_eq!(back.cues, b.cues);
        assert_eq!(back.generator, b.generator);
        assert_eq!(back.policy, b.policy);
        assert_eq!(std::fs::read(&path).unwrap(), back.checkpoint().to_bytes());
    }

    #[test]
    fn sections_split_generator_and_policy() {
        let b = tiny();
        let ck = b.checkpoint();
        assert_eq!(ck.sections.keys().collect::<Vec<_>>(), ["generator", "policy"]);
        assert_eq!(ck.sections["policy"].len(), b.policy_params().len());
        assert_eq!(ck.sections["generator"].len(), b.generator_params().len());
    }

    #[test]
    fn cue_words_map_to_vocab() {
        let b = tiny();
        assert_eq!(b.generator.cue_tokens, vec![crate::corpus::vocab::EPT, b.vocab.id("cat"), b.vocab.id("dog")]);
    }
}
