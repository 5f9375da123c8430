//! Dialogue state (context ⊕ topic) and the cue-word selection head.

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::ops::{add_into, matvec_acc, matvec_t_acc, outer_acc, softmax_slice};
use crate::nn::{Gradients, LstmCache, LstmCell, ParamId, ParamStore};
use crate::rng::Choice;

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    /// Topic tracker, fed with generator embeddings of cue words.
    pub topic: LstmCell,
    pub action_w: ParamId,
    pub action_b: ParamId,
    pub context_size: usize,
    pub topic_size: usize,
    pub cues: usize,
}

/// `context` is the first-layer encoder state over the previous two
/// utterances; `topic` the topic tracker's hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueState {
    pub context: Vec<f64>,
    pub topic: Vec<f64>,
}

impl DialogueState {
    /// `[context ⊕ topic]`.
    pub fn vector(&self) -> Vec<f64> {
        let mut s = self.context.clone();
        s.extend_from_slice(&self.topic);
        s
    }
}

/// Hidden and cell state of the topic tracker.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub struct TopicTrace {
    tokens: Vec<usize>,
    caches: Vec<LstmCache>,
    pub state: TopicState,
}

pub struct ActionTrace {
    state: Vec<f64>,
    activation: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Selection rule for [`select_action`].
pub type ActionMode<'a> = Choice<'a>;

pub fn select_action(distribution: &[f64], mode: &mut ActionMode) -> usize {
    mode.pick(distribution)
}

/// Encoded previous two utterances: the generator's first-layer final state.
pub fn track_context(generator: &Generator, store: &ParamStore, query: &[usize]) -> Vec<f64> {
    generator.encode(store, query).h1
}

impl Policy {
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        embed: usize,
        context_size: usize,
        topic_size: usize,
        cues: usize,
        rng: &mut R,
    ) -> Self {
        let topic = LstmCell::new(store, "policy.topic", embed, topic_size, rng);
        let action_w = store.add_uniform("policy.action.w", &[cues, context_size + topic_size], rng);
        let action_b = store.add_uniform("policy.action.b", &[cues], rng);
        Policy {
            topic,
            action_w,
            action_b,
            context_size,
            topic_size,
            cues,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.topic.params().to_vec();
        ids.extend([self.action_w, self.action_b]);
        ids
    }

    pub fn empty_topic(&self) -> TopicState {
        TopicState {
            h: vec![0.0; self.topic_size],
            c: vec![0.0; self.topic_size],
        }
    }

    fn cue_token(&self, generator: &Generator, cue: usize) -> Result<usize> {
        generator
            .cue_tokens
            .get(cue)
            .copied()
            .ok_or_else(|| Error::Argument(format!("cue index {cue} out of range for {} cue words", self.cues)))
    }

    /// One topic-tracker step consuming the embedding of `cue`.
    pub fn track_topic(&self, store: &ParamStore, generator: &Generator, prev: &TopicState, cue: usize) -> Result<TopicState> {
        let token = self.cue_token(generator, cue)?;
        let (h, c, _) = self.topic.forward(store, generator.embed(store, token), &prev.h, &prev.c);
        Ok(TopicState { h, c })
    }

    /// Runs the topic tracker over a cue history from the zero state.
    pub fn topic_traced(&self, store: &ParamStore, generator: &Generator, history: &[usize]) -> Result<TopicTrace> {
        let mut state = self.empty_topic();
        let mut tokens = Vec::with_capacity(history.len());
        let mut caches = Vec::with_capacity(history.len());
        for &cue in history {
            let token = self.cue_token(generator, cue)?;
            let (h, c, cache) = self.topic.forward(store, generator.embed(store, token), &state.h, &state.c);
            state = TopicState { h, c };
            tokens.push(token);
            caches.push(cache);
        }
        Ok(TopicTrace { tokens, caches, state })
    }

    pub fn init_topic(&self, store: &ParamStore, generator: &Generator, history: &[usize]) -> Result<TopicState> {
        Ok(self.topic_traced(store, generator, history)?.state)
    }

    /// BPTT through the topic tracker. With `into_embeddings` the input
    /// gradients reach the generator's embedding table.
    pub fn backward_topic(
        &self,
        store: &ParamStore,
        generator: &Generator,
        trace: &TopicTrace,
        dh: &[f64],
        grads: &mut Gradients,
        into_embeddings: bool,
    ) {
        let mut dh = dh.to_vec();
        let mut dc = vec![0.0; self.topic_size];
        let d = generator.dims.embed;
        for (cache, &token) in trace.caches.iter().zip(&trace.tokens).rev() {
            let g = self.topic.backward(store, cache, &dh, &dc, grads);
            if into_embeddings {
                add_into(&mut grads.slot(generator.embedding)[token * d..(token + 1) * d], &g.dx);
            }
            dh = g.dh_prev;
            dc = g.dc_prev;
        }
    }

    pub fn distribution_traced(&self, store: &ParamStore, state: &DialogueState) -> Result<ActionTrace> {
        if state.context.len() != self.context_size {
            return Err(Error::dim("policy context", self.context_size, state.context.len()));
        }
        if state.topic.len() != self.topic_size {
            return Err(Error::dim("policy topic", self.topic_size, state.topic.len()));
        }
        let s = state.vector();
        let mut z = store.value(self.action_b).to_vec();
        matvec_acc(store.value(self.action_w), s.len(), &s, &mut z);
        let activation: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let probs = softmax_slice(&activation);
        Ok(ActionTrace {
            state: s,
            activation,
            probs,
        })
    }

    /// `softmax(tanh(W_a · [context ⊕ topic] + b_a))`.
    pub fn policy_distribution(&self, store: &ParamStore, state: &DialogueState) -> Result<Vec<f64>> {
        Ok(self.distribution_traced(store, state)?.probs)
    }

    /// Accumulates the gradient of `scale · (−ln p[action])` into the head
    /// parameters and returns the gradients w.r.t. context and topic.
    pub fn backward_action(
        &self,
        store: &ParamStore,
        trace: &ActionTrace,
        action: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut dz = trace.probs.clone();
        dz[action] -= 1.0;
        for (g, a) in dz.iter_mut().zip(&trace.activation) {
            *g *= scale * (1.0 - a * a);
        }
        outer_acc(grads.slot(self.action_w), &dz, &trace.state);
        add_into(grads.slot(self.action_b), &dz);
        let mut ds = vec![0.0; trace.state.len()];
        matvec_t_acc(store.value(self.action_w), trace.state.len(), &dz, &mut ds);
        let topic = ds.split_off(self.context_size);
        (ds, topic)
    }
}
