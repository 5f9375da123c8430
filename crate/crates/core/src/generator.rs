//! Cue-conditioned two-layer LSTM encoder/decoder. The same two cells run
//! the encoder and the decoder.

use crate::corpus::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::ops::{add_into, matvec_acc, matvec_t_acc, outer_acc, softmax_slice};
use crate::nn::{Gradients, LstmCache, LstmCell, ParamId, ParamStore};
use crate::rng::Choice;

pub use crate::corpus::MAX_REPLY_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub embedding: ParamId,
    pub l1: LstmCell,
    pub l2: LstmCell,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    pub dims: GeneratorDims,
    /// Vocabulary index of every cue word.
    pub cue_tokens: Vec<usize>,
    /// When false the decoder input is the zero vector (plain seq2seq).
    pub cue_fusion: bool,
}

/// Hidden and cell states of both layers. The encoder returns one; the
/// decoder starts from it.
#[derive(Clone, Debug, PartialEq)]
pub struct StackState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

pub type EncodeResult = StackState;

impl StackState {
    pub fn zeros(hidden: usize) -> Self {
        StackState {
            h1: vec![0.0; hidden],
            c1: vec![0.0; hidden],
            h2: vec![0.0; hidden],
            c2: vec![0.0; hidden],
        }
    }
}

pub struct EncodeTrace {
    tokens: Vec<usize>,
    steps: Vec<(LstmCache, LstmCache)>,
    pub state: StackState,
}

struct DecodeStep {
    y_prev: usize,
    target: usize,
    l1: LstmCache,
    l2: LstmCache,
    top: Vec<f64>,
    probs: Vec<f64>,
}

pub struct DecodeTrace {
    steps: Vec<DecodeStep>,
}

impl Generator {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, dims: GeneratorDims, cue_tokens: Vec<usize>, rng: &mut R) -> Self {
        let GeneratorDims { vocab, embed, hidden } = dims;
        let embedding = store.add_uniform("generator.embedding", &[vocab, embed], rng);
        let l1 = LstmCell::new(store, "generator.l1", embed, hidden, rng);
        let l2 = LstmCell::new(store, "generator.l2", embed + hidden, hidden, rng);
        let head_w = store.add_uniform("generator.head.w", &[vocab, hidden], rng);
        let head_b = store.add_uniform("generator.head.b", &[vocab], rng);
        let fuse_w = store.add_uniform("generator.fuse.w", &[embed, embed], rng);
        let fuse_b = store.add_uniform("generator.fuse.b", &[embed], rng);
        Generator {
            embedding,
            l1,
            l2,
            head_w,
            head_b,
            fuse_w,
            fuse_b,
            dims,
            cue_tokens,
            cue_fusion: true,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding];
        ids.extend(self.l1.params());
        ids.extend(self.l2.params());
        ids.extend([self.head_w, self.head_b, self.fuse_w, self.fuse_b]);
        ids
    }

    pub fn embed<'a>(&self, store: &'a ParamStore, token: usize) -> &'a [f64] {
        let d = self.dims.embed;
        &store.value(self.embedding)[token * d..(token + 1) * d]
    }

    fn embed_grad<'g>(&self, grads: &'g mut Gradients, token: usize) -> &'g mut [f64] {
        let d = self.dims.embed;
        &mut grads.slot(self.embedding)[token * d..(token + 1) * d]
    }

    fn layer2_input(&self, store: &ParamStore, token: usize, below: &[f64]) -> Vec<f64> {
        let mut x = self.embed(store, token).to_vec();
        x.extend_from_slice(below);
        x
    }

    /// Runs both layers over `tokens` from zero states. An empty query is
    /// read as a lone `<bos>`.
    pub fn encode(&self, store: &ParamStore, tokens: &[usize]) -> EncodeResult {
        self.encode_traced(store, tokens).state
    }

    pub fn encode_traced(&self, store: &ParamStore, tokens: &[usize]) -> EncodeTrace {
        let tokens = if tokens.is_empty() { vec![BOS] } else { tokens.to_vec() };
        let mut s = StackState::zeros(self.dims.hidden);
        let mut steps = Vec::with_capacity(tokens.len());
        for &tok in &tokens {
            let (h1, c1, k1) = self.l1.forward(store, self.embed(store, tok), &s.h1, &s.c1);
            let x2 = self.layer2_input(store, PAD, &h1);
            let (h2, c2, k2) = self.l2.forward(store, &x2, &s.h2, &s.c2);
            s = StackState { h1, c1, h2, c2 };
            steps.push((k1, k2));
        }
        EncodeTrace { tokens, steps, state: s }
    }

    /// Backpropagates gradients w.r.t. the final encoder states.
    pub fn backward_encode(&self, store: &ParamStore, trace: &EncodeTrace, d_final: StackState, grads: &mut Gradients) {
        let d = self.dims.embed;
        let StackState { h1: mut dh1, c1: mut dc1, h2: mut dh2, c2: mut dc2 } = d_final;
        for (t, (k1, k2)) in trace.steps.iter().enumerate().rev() {
            let g2 = self.l2.backward(store, k2, &dh2, &dc2, grads);
            add_into(self.embed_grad(grads, PAD), &g2.dx[..d]);
            add_into(&mut dh1, &g2.dx[d..]);
            dh2 = g2.dh_prev;
            dc2 = g2.dc_prev;
            let g1 = self.l1.backward(store, k1, &dh1, &dc1, grads);
            add_into(self.embed_grad(grads, trace.tokens[t]), &g1.dx);
            dh1 = g1.dh_prev;
            dc1 = g1.dc_prev;
        }
    }

    /// `W_I · emb(cue) + b_I`.
    pub fn fuse_cue(&self, store: &ParamStore, cue: usize) -> Result<Vec<f64>> {
        let token = *self
            .cue_tokens
            .get(cue)
            .ok_or_else(|| Error::Argument(format!("cue index {cue} out of range for {} cue words", self.cue_tokens.len())))?;
        let mut out = store.value(self.fuse_b).to_vec();
        matvec_acc(store.value(self.fuse_w), self.dims.embed, self.embed(store, token), &mut out);
        Ok(out)
    }

    /// Per-step decoder input: the fused cue, or zeros without cue fusion.
    pub fn decoder_input(&self, store: &ParamStore, cue: usize) -> Result<Vec<f64>> {
        if self.cue_fusion {
            self.fuse_cue(store, cue)
        } else {
            self.cue_tokens
                .get(cue)
                .map(|_| vec![0.0; self.dims.embed])
                .ok_or_else(|| Error::Argument(format!("cue index {cue} out of range")))
        }
    }

    pub fn backward_fuse(&self, store: &ParamStore, cue: usize, d_input: &[f64], grads: &mut Gradients) {
        if !self.cue_fusion {
            return;
        }
        let token = self.cue_tokens[cue];
        let e = self.embed(store, token).to_vec();
        outer_acc(grads.slot(self.fuse_w), d_input, &e);
        add_into(grads.slot(self.fuse_b), d_input);
        let mut de = vec![0.0; self.dims.embed];
        matvec_t_acc(store.value(self.fuse_w), self.dims.embed, d_input, &mut de);
        add_into(self.embed_grad(grads, token), &de);
    }

    fn step_inner(&self, store: &ParamStore, input: &[f64], y_prev: usize, s: &StackState) -> (Vec<f64>, StackState, LstmCache, LstmCache) {
        let (h1, c1, k1) = self.l1.forward(store, input, &s.h1, &s.c1);
        let x2 = self.layer2_input(store, y_prev, &h1);
        let (h2, c2, k2) = self.l2.forward(store, &x2, &s.h2, &s.c2);
        let mut logits = store.value(self.head_b).to_vec();
        matvec_acc(store.value(self.head_w), self.dims.hidden, &h2, &mut logits);
        (softmax_slice(&logits), StackState { h1, c1, h2, c2 }, k1, k2)
    }

    /// One decoder step: returns the next-token distribution and state.
    pub fn decode_step(&self, store: &ParamStore, input: &[f64], y_prev: usize, state: &StackState) -> (Vec<f64>, StackState) {
        let (p, s, _, _) = self.step_inner(store, input, y_prev, state);
        (p, s)
    }

    /// Decodes from `<bos>` until `<eos>` or `max_len` tokens.
    pub fn generate_from(&self, store: &ParamStore, init: &StackState, input: &[f64], choice: &mut Choice, max_len: usize) -> Vec<usize> {
        let mut state = init.clone();
        let mut y = BOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (p, s) = self.decode_step(store, input, y, &state);
            state = s;
            y = choice.pick(&p);
            if y == EOS {
                break;
            }
            out.push(y);
        }
        out
    }

    pub fn generate(&self, store: &ParamStore, query: &[usize], cue: usize, choice: &mut Choice, max_len: usize) -> Result<Vec<usize>> {
        let enc = self.encode(store, query);
        let input = self.decoder_input(store, cue)?;
        Ok(self.generate_from(store, &enc, &input, choice, max_len))
    }

    /// Teacher-forced negative log-likelihood of `reply` followed by `<eos>`.
    pub fn reply_loss_traced(&self, store: &ParamStore, init: &StackState, input: &[f64], reply: &[usize]) -> (f64, DecodeTrace) {
        let mut state = init.clone();
        let mut steps = Vec::with_capacity(reply.len() + 1);
        let mut loss = 0.0;
        let mut y_prev = BOS;
        for &target in reply.iter().chain(std::iter::once(&EOS)) {
            let (probs, s, k1, k2) = self.step_inner(store, input, y_prev, &state);
            loss -= probs[target].max(f64::MIN_POSITIVE).ln();
            steps.push(DecodeStep { y_prev, target, l1: k1, l2: k2, top: s.h2.clone(), probs });
            state = s;
            y_prev = target;
        }
        (loss, DecodeTrace { steps })
    }

    /// Returns the gradients w.r.t. the decoder input and the initial state.
    pub fn backward_decode(&self, store: &ParamStore, trace: &DecodeTrace, grads: &mut Gradients) -> (Vec<f64>, StackState) {
        let hd = self.dims.hidden;
        let d = self.dims.embed;
        let mut ds = StackState::zeros(hd);
        let mut d_input = vec![0.0; d];
        for step in trace.steps.iter().rev() {
            let mut dlogits = step.probs.clone();
            dlogits[step.target] -= 1.0;
            outer_acc(grads.slot(self.head_w), &dlogits, &step.top);
            add_into(grads.slot(self.head_b), &dlogits);
            let mut dh2 = ds.h2.clone();
            matvec_t_acc(store.value(self.head_w), hd, &dlogits, &mut dh2);

            let g2 = self.l2.backward(store, &step.l2, &dh2, &ds.c2, grads);
            add_into(self.embed_grad(grads, step.y_prev), &g2.dx[..d]);
            let mut dh1 = ds.h1.clone();
            add_into(&mut dh1, &g2.dx[d..]);
            let g1 = self.l1.backward(store, &step.l1, &dh1, &ds.c1, grads);
            add_into(&mut d_input, &g1.dx);
            ds = StackState { h1: g1.dh_prev, c1: g1.dc_prev, h2: g2.dh_prev, c2: g2.dc_prev };
        }
        (d_input, ds)
    }

    /// Draws a reply by ancestral sampling with its own seeded stream.
    pub fn sample(&self, store: &ParamStore, query: &[usize], cue: usize, seed: u64, max_len: usize) -> Result<Vec<usize>> {
        let mut rng = crate::rng::seeded(seed);
        self.generate(store, query, cue, &mut Choice::Sample(&mut rng), max_len)
    }
}
