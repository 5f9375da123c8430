//! Small dual-encoder relevance scorer: mean-pooled word vectors, one
//! affine+tanh tower per side, `sigmoid(u · v)`. Trained against in-batch
//! negatives.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::corpus::{EmbeddingTable, TrainingInstance};
use crate::error::{Error, Result};
use crate::nn::ops::{add_into, matvec_acc, outer_acc, sigmoid, softmax_slice};
use crate::nn::{adam_step, AdamConfig, AdamState, Checkpoint, Gradients, ParamId, ParamStore};
use crate::rng::{rng_from, seeded};

use super::RelevanceScorer;

#[derive(Clone, Debug)]
pub struct DualEncoderConfig {
    pub output: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DualEncoderConfig {
    fn default() -> Self {
        DualEncoderConfig {
            output: 32,
            epochs: 5,
            batch: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DualEncoder {
    pub store: ParamStore,
    query_w: ParamId,
    query_b: ParamId,
    reply_w: ParamId,
    reply_b: ParamId,
    output: usize,
    table: Arc<EmbeddingTable>,
}

struct Tower {
    pooled: Vec<f64>,
    out: Vec<f64>,
}

impl DualEncoder {
    pub fn new(table: Arc<EmbeddingTable>, output: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = seeded(seed);
        let d = table.dim();
        let query_w = store.add_uniform("scorer.query.w", &[output, d], &mut rng);
        let query_b = store.add_uniform("scorer.query.b", &[output], &mut rng);
        let reply_w = store.add_uniform("scorer.reply.w", &[output, d], &mut rng);
        let reply_b = store.add_uniform("scorer.reply.b", &[output], &mut rng);
        DualEncoder {
            store,
            query_w,
            query_b,
            reply_w,
            reply_b,
            output,
            table,
        }
    }

    fn pool(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.table.dim()];
        if tokens.is_empty() {
            return v;
        }
        for t in tokens {
            add_into(&mut v, self.table.lookup(t));
        }
        let n = tokens.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn tower(&self, store: &ParamStore, w: ParamId, b: ParamId, tokens: &[String]) -> Tower {
        let pooled = self.pool(tokens);
        let mut out = store.value(b).to_vec();
        matvec_acc(store.value(w), pooled.len(), &pooled, &mut out);
        out.iter_mut().for_each(|x| *x = x.tanh());
        Tower { pooled, out }
    }

    fn tower_backward(w: ParamId, b: ParamId, t: &Tower, d_out: &[f64], grads: &mut Gradients) {
        let dz: Vec<f64> = d_out.iter().zip(&t.out).map(|(g, y)| g * (1.0 - y * y)).collect();
        outer_acc(grads.slot(w), &dz, &t.pooled);
        add_into(grads.slot(b), &dz);
    }

    /// Matching probability of a (context, reply) pair.
    pub fn score_pair(&self, context: &[String], reply: &[String]) -> f64 {
        let u = self.tower(&self.store, self.query_w, self.query_b, context);
        let v = self.tower(&self.store, self.reply_w, self.reply_b, reply);
        sigmoid(u.out.iter().zip(&v.out).map(|(a, b)| a * b).sum())
    }

    /// Softmax cross-entropy of each context against all replies of the
    /// batch, averaged over the batch.
    pub fn batch_loss(&self, store: &ParamStore, pairs: &[(&[String], &[String])]) -> (f64, Gradients) {
        let queries: Vec<Tower> = pairs.iter().map(|(q, _)| self.tower(store, self.query_w, self.query_b, q)).collect();
        let replies: Vec<Tower> = pairs.iter().map(|(_, r)| self.tower(store, self.reply_w, self.reply_b, r)).collect();
        let n = pairs.len();
        let mut grads = store.gradients();
        let mut dq = vec![vec![0.0; self.output]; n];
        let mut dr = vec![vec![0.0; self.output]; n];
        let mut loss = 0.0;
        for i in 0..n {
            let logits: Vec<f64> = replies
                .iter()
                .map(|r| queries[i].out.iter().zip(&r.out).map(|(a, b)| a * b).sum())
                .collect();
            let p = softmax_slice(&logits);
            loss -= p[i].ln();
            for j in 0..n {
                let g = (p[j] - if i == j { 1.0 } else { 0.0 }) / n as f64;
                for k in 0..self.output {
                    dq[i][k] += g * replies[j].out[k];
                    dr[j][k] += g * queries[i].out[k];
                }
            }
        }
        for i in 0..n {
            Self::tower_backward(self.query_w, self.query_b, &queries[i], &dq[i], &mut grads);
            Self::tower_backward(self.reply_w, self.reply_b, &replies[i], &dr[i], &mut grads);
        }
        (loss / n as f64, grads)
    }

    fn meta(&self) -> BTreeMap<String, serde_json::Value> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), serde_json::json!("dual_encoder"));
        meta.insert("dim".into(), serde_json::json!(self.table.dim()));
        meta.insert("output".into(), serde_json::json!(self.output));
        meta
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_store(&self.store, self.meta()).save(path)
    }

    pub fn load(path: &Path, table: Arc<EmbeddingTable>) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let origin = path.display().to_string();
        if ckpt.meta.get("kind").and_then(|v| v.as_str()) != Some("dual_encoder") {
            return Err(Error::format(&origin, "not a dual-encoder checkpoint"));
        }
        let dim = ckpt.meta.get("dim").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        if dim != table.dim() {
            return Err(Error::format(&origin, format!("scorer expects {dim}-dimensional word vectors, table has {}", table.dim())));
        }
        let output = ckpt
            .meta
            .get("output")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::format(&origin, "missing output size"))? as usize;
        let mut enc = DualEncoder::new(table, output, 0);
        ckpt.apply_to(&mut enc.store)?;
        Ok(enc)
    }
}

impl RelevanceScorer for DualEncoder {
    fn score(&self, reply: &[String], context: &[Vec<String>]) -> f64 {
        let joined: Vec<String> = context.iter().flatten().cloned().collect();
        self.score_pair(&joined, reply)
    }
}

/// Fits a dual encoder on the (query, reply) pairs of `instances`.
pub fn train_dual_encoder(instances: &[TrainingInstance], table: Arc<EmbeddingTable>, config: &DualEncoderConfig) -> Result<DualEncoder> {
    let mut enc = DualEncoder::new(table, config.output, config.seed);
    let ids: Vec<ParamId> = enc.store.ids().collect();
    let mut adam = AdamState::new(&enc.store, ids, AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_from(config.seed, &[epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            let pairs: Vec<(&[String], &[String])> = chunk
                .iter()
                .map(|&i| (instances[i].query.as_slice(), instances[i].reply.as_slice()))
                .collect();
            let (loss, grads) = enc.batch_loss(&enc.store, &pairs);
            enc.store.accumulate(&grads, 1.0);
            adam_step(&mut enc.store, &mut adam)?;
            total += loss;
            batches += 1;
        }
        log::info!("scorer epoch {}: loss {:.4}", epoch + 1, total / batches.max(1) as f64);
    }
    Ok(enc)
}
