//! Turn-by-turn self-play engine shared by rollouts, simulation and chat.

use crate::corpus::{extract_cue_word, make_query, TrainingInstance, MAX_REPLY_LEN};
use crate::error::Result;
use crate::model::ModelBundle;
use crate::policy::{DialogueState, TopicState};
use crate::reward::{RewardBreakdown, RewardModel};
use crate::rng::Choice;

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub cue: usize,
    pub tokens: Vec<String>,
    pub reward: Option<RewardBreakdown>,
    /// Policy distribution the cue was drawn from.
    pub distribution: Vec<f64>,
    pub state: DialogueState,
}

/// A dialogue in progress: utterances so far, their cue words and the
/// topic tracker's state over those cues.
#[derive(Clone, Debug)]
pub struct Conversation<'a> {
    bundle: &'a ModelBundle,
    utterances: Vec<Vec<String>>,
    cues: Vec<usize>,
    topic: TopicState,
}

impl<'a> Conversation<'a> {
    /// Starts from `seed` utterances (oldest first) whose cue words are
    /// `seed_cues`.
    pub fn new(bundle: &'a ModelBundle, seed: Vec<Vec<String>>, seed_cues: Vec<usize>) -> Result<Self> {
        let topic = bundle.policy.init_topic(&bundle.store, &bundle.generator, &seed_cues)?;
        Ok(Conversation {
            bundle,
            utterances: seed,
            cues: seed_cues,
            topic,
        })
    }

    /// Starts from the context of a training instance.
    pub fn from_instance(bundle: &'a ModelBundle, inst: &TrainingInstance) -> Result<Self> {
        let (older, newer) = inst.context_utterances();
        let seed = if older.is_empty() { vec![newer] } else { vec![older, newer] };
        Self::new(bundle, seed, bundle.cue_indices(&inst.history_cues))
    }

    pub fn utterances(&self) -> &[Vec<String>] {
        &self.utterances
    }

    pub fn cues(&self) -> &[usize] {
        &self.cues
    }

    /// The previous two utterances (one if only one exists).
    pub fn context(&self) -> &[Vec<String>] {
        let n = self.utterances.len();
        &self.utterances[n.saturating_sub(2)..]
    }

    pub fn query(&self) -> Vec<usize> {
        let n = self.utterances.len();
        let older = (n >= 2).then(|| self.utterances[n - 2].as_slice());
        let newer: &[String] = self.utterances.last().map(Vec::as_slice).unwrap_or(&[]);
        let (query, _) = make_query(older, newer);
        self.bundle.encode(&query)
    }

    pub fn state(&self) -> DialogueState {
        let b = self.bundle;
        DialogueState {
            context: b.generator.encode(&b.store, &self.query()).h1,
            topic: self.topic.h.clone(),
        }
    }

    pub fn distribution(&self) -> Result<Vec<f64>> {
        self.bundle.policy.policy_distribution(&self.bundle.store, &self.state())
    }

    /// Picks a cue, generates the reply, scores it and appends it.
    pub fn step(&mut self, action: &mut Choice, decode: &mut Choice, rewards: Option<&RewardModel>) -> Result<Turn> {
        let b = self.bundle;
        let enc = b.generator.encode(&b.store, &self.query());
        let state = DialogueState {
            context: enc.h1.clone(),
            topic: self.topic.h.clone(),
        };
        let distribution = b.policy.policy_distribution(&b.store, &state)?;
        let cue = action.pick(&distribution);
        let input = b.generator.decoder_input(&b.store, cue)?;
        let ids = b.generator.generate_from(&b.store, &enc, &input, decode, MAX_REPLY_LEN);
        let tokens = b.decode(&ids);
        let reward = rewards.map(|r| r.score(b.cues.word(cue), &tokens, self.context()));
        self.topic = b.policy.track_topic(&b.store, &b.generator, &self.topic, cue)?;
        self.utterances.push(tokens.clone());
        self.cues.push(cue);
        Ok(Turn {
            cue,
            tokens,
            reward,
            distribution,
            state,
        })
    }

    /// Appends an utterance produced outside the model (a human turn). Its
    /// cue word is read off the text.
    pub fn push_external(&mut self, tokens: Vec<String>) -> Result<usize> {
        let b = self.bundle;
        let cue = extract_cue_word(&tokens, &b.cues);
        self.topic = b.policy.track_topic(&b.store, &b.generator, &self.topic, cue)?;
        self.utterances.push(tokens);
        self.cues.push(cue);
        Ok(cue)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CueVocab, Vocab};
    use crate::model::ModelDims;
    use crate::rng::seeded;

    fn bundle() -> ModelBundle {
        let vocab = Vocab::from_tokens(["a", "b", "cat", "dog"].map(String::from));
        let cues = CueVocab::from_entries([("cat".to_string(), 3), ("dog".to_string(), 2)]);
        ModelBundle::new(vocab, cues, ModelDims { embed: 3, hidden: 4, topic_hidden: 3 }, true, 1)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn instance_start_reproduces_query() {
        let b = bundle();
        for (older, split) in [("a b", 2), ("<bos>", 1)] {
            let inst = TrainingInstance {
                query: toks(&format!("{older} cat dog")),
                query_split: split,
                history_cues: toks("<ept> cat"),
                gold_cue: "dog".into(),
                reply: toks("dog"),
            };
            let conv = Conversation::from_instance(&b, &inst).unwrap();
            assert_eq!(conv.query(), b.encode(&inst.query));
            assert_eq!(conv.cues(), [0, 1]);
        }
    }

    #[test]
    fn step_appends_and_advances_topic() {
        let b = bundle();
        let mut conv = Conversation::new(&b, vec![toks("a cat")], vec![1]).unwrap();
        let before = conv.state();
        let mut rng = seeded(3);
        let turn = conv.step(&mut Choice::Sample(&mut rng), &mut Choice::Greedy, None).unwrap();
        assert_eq!(turn.state, before);
        assert_eq!(conv.utterances().len(), 2);
        assert_eq!(conv.cues().len(), 2);
        assert!(turn.tokens.len() <= MAX_REPLY_LEN);
        assert!((turn.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(conv.state().topic, before.topic);
    }

    #[test]
    fn external_turn_uses_extracted_cue() {
        let b = bundle();
        let mut conv = Conversation::new(&b, vec![toks("a")], vec![0]).unwrap();
        assert_eq!(conv.push_external(toks("a dog")).unwrap(), 2);
        assert_eq!(conv.context(), [toks("a"), toks("a dog")]);
    }
}
