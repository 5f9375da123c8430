use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelBundle, PreparedInstance};
use crate::nn::ops::{add_into, argmax};
use crate::nn::{adam_step, AdamConfig, AdamState, Gradients};
use crate::policy::DialogueState;
use crate::rng::rng_from;

use super::ordered_sum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Condition the reply on the policy's argmax cue instead of the gold cue.
    pub cue_from_argmax: bool,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            batch: 64,
            lr: 1e-4,
            epochs: 10,
            cue_from_argmax: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Cue cross-entropy against the gold cue plus the teacher-forced reply
/// cross-entropy (reply tokens and the closing `<eos>`), with gradients for
/// every parameter.
pub fn supervised_loss(inst: &PreparedInstance, bundle: &ModelBundle, cue_from_argmax: bool) -> Result<(f64, Gradients)> {
    let store = &bundle.store;
    let gen = &bundle.generator;
    let policy = &bundle.policy;

    let enc = gen.encode_traced(store, &inst.query);
    let topic = policy.topic_traced(store, gen, &inst.history)?;
    let state = DialogueState {
        context: enc.state.h1.clone(),
        topic: topic.state.h.clone(),
    };
    let action = policy.distribution_traced(store, &state)?;
    bundle.cues.check(inst.gold)?;
    let cue_loss = -action.probs[inst.gold].ln();
    let cue = if cue_from_argmax { argmax(&action.probs) } else { inst.gold };
    let input = gen.decoder_input(store, cue)?;
    let (reply_loss, decode) = gen.reply_loss_traced(store, &enc.state, &input, &inst.reply);
    let loss = cue_loss + reply_loss;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite supervised loss {loss}")));
    }

    let mut grads = store.gradients();
    let (d_input, mut d_init) = gen.backward_decode(store, &decode, &mut grads);
    gen.backward_fuse(store, cue, &d_input, &mut grads);
    let (d_context, d_topic) = policy.backward_action(store, &action, inst.gold, 1.0, &mut grads);
    add_into(&mut d_init.h1, &d_context);
    policy.backward_topic(store, gen, &topic, &d_topic, &mut grads, true);
    gen.backward_encode(store, &enc, d_init, &mut grads);
    Ok((loss, grads))
}

/// Mini-batch Adam over shuffled instances. `on_epoch` sees the model after
/// every epoch. On divergence the parameters are restored to the last
/// completed epoch and a [`Error::Divergence`] is returned.
pub fn pretrain<F>(
    bundle: &mut ModelBundle,
    instances: &[PreparedInstance],
    config: &SupervisedConfig,
    seed: u64,
    mut on_epoch: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&EpochReport, &ModelBundle) -> Result<()>,
{
    if config.batch == 0 {
        return Err(Error::Config {
            key: "supervised.batch".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut adam = AdamState::new(&bundle.store, bundle.all_params(), AdamConfig::with_lr(config.lr));
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let snapshot = bundle.store.clone();
        order.sort_unstable();
        order.shuffle(&mut rng_from(seed, &[epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(config.batch) {
            let result = (|| -> Result<f64> {
                let parts: Vec<(f64, Gradients)> = batch
                    .par_iter()
                    .map(|&i| supervised_loss(&instances[i], bundle, config.cue_from_argmax))
                    .collect::<Result<_>>()?;
                let loss: f64 = parts.iter().map(|p| p.0).sum();
                let mut grads = ordered_sum(parts.into_iter().map(|p| p.1).collect(), bundle.store.gradients());
                grads.scale(1.0 / batch.len() as f64);
                grads.check_finite(&bundle.store)?;
                bundle.store.accumulate(&grads, 1.0);
                adam_step(&mut bundle.store, &mut adam)?;
                Ok(loss)
            })();
            match result {
                Ok(loss) => total += loss,
                Err(Error::Divergence(msg)) | Err(Error::NonFiniteGradient { name: msg }) => {
                    bundle.store = snapshot;
                    return Err(Error::Divergence(format!("epoch {}: {msg}", epoch + 1)));
                }
                Err(e) => return Err(e),
            }
        }
        let mean_loss = if instances.is_empty() { 0.0 } else { total / instances.len() as f64 };
        log::info!("pretrain epoch {}: mean loss {mean_loss:.4}", epoch + 1);
        history.push(mean_loss);
        on_epoch(&EpochReport { epoch: epoch + 1, mean_loss }, bundle)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CueVocab, Vocab};
    use crate::model::ModelDims;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::ParamStore;
    use crate::rng::Choice;

    fn bundle(hidden: usize, seed: u64) -> ModelBundle {
        let words: Vec<String> = ["sun", "moon", "star", "sky", "blue", "red"].map(String::from).to_vec();
        let vocab = Vocab::from_tokens(words);
        let cues = CueVocab::from_entries([("sun".to_string(), 3), ("sky".to_string(), 2)]);
        ModelBundle::new(vocab, cues, ModelDims { embed: 3, hidden, topic_hidden: 3 }, true, seed)
    }

    fn instance(b: &ModelBundle) -> PreparedInstance {
        PreparedInstance {
            query: vec![b.vocab.id("sun"), b.vocab.id("blue"), b.vocab.id("sky")],
            history: vec![0, 2],
            gold: 1,
            reply: vec![b.vocab.id("moon"), b.vocab.id("red")],
        }
    }

    #[test]
    fn uniform_model_loss() {
        let mut b = bundle(4, 1);
        let ids = b.all_params();
        for id in ids {
            b.store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let inst = instance(&b);
        let (loss, _) = supervised_loss(&inst, &b, false).unwrap();
        let c = b.cues.len() as f64;
        let v = b.vocab.len() as f64;
        let m = inst.reply.len() as f64;
        assert!((loss - (c.ln() + (m + 1.0) * v.ln())).abs() < 1e-12);
    }

    #[test]
    fn loss_is_non_negative_and_finite() {
        for seed in 0..10 {
            let b = bundle(4, seed);
            let (loss, g) = supervised_loss(&instance(&b), &b, seed % 2 == 0).unwrap();
            assert!(loss >= 0.0 && loss.is_finite());
            assert!(g.check_finite(&b.store).is_ok());
        }
    }

    #[test]
    fn gradient_check_all_parameters() {
        for seed in 0..4 {
            let mut b = bundle(4, seed);
            let ids = b.all_params();
            for &id in &ids {
                b.store.value_mut(id).iter_mut().for_each(|v| *v *= 6.0);
            }
            let inst = instance(&b);
            let frozen = b.clone();
            let loss = |s: &ParamStore| {
                let mut probe = frozen.clone();
                probe.store = s.clone();
                supervised_loss(&inst, &probe, false).unwrap()
            };
            let report = grad_check(loss, &mut b.store, 1e-5);
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn single_pair_is_memorised() {
        let mut b = bundle(8, 3);
        let inst = instance(&b);
        let cfg = SupervisedConfig { batch: 1, lr: 0.05, epochs: 150, cue_from_argmax: false };
        let losses = pretrain(&mut b, std::slice::from_ref(&inst), &cfg, 0, |_, _| Ok(())).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let out = b.generator.generate(&b.store, &inst.query, inst.gold, &mut Choice::Greedy, 22).unwrap();
        assert_eq!(out, inst.reply);
    }

    #[test]
    fn same_seed_same_parameters() {
        let run = || {
            let mut b = bundle(4, 2);
            let insts = vec![instance(&b); 3];
            let cfg = SupervisedConfig { batch: 2, lr: 0.01, epochs: 3, cue_from_argmax: false };
            pretrain(&mut b, &insts, &cfg, 5, |_, _| Ok(())).unwrap();
            b.checkpoint().to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_restores_last_epoch() {
        let mut b = bundle(4, 2);
        let inst = instance(&b);
        let before = b.store.clone();
        let id = b.generator.head_b;
        b.store.value_mut(id)[0] = f64::NAN;
        let poisoned = b.store.clone();
        let cfg = SupervisedConfig { batch: 1, lr: 0.01, epochs: 2, cue_from_argmax: false };
        let err = pretrain(&mut b, &[inst], &cfg, 0, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
        assert_eq!(format!("{:?}", b.store), format!("{:?}", poisoned));
        assert_ne!(format!("{:?}", b.store), format!("{:?}", before));
    }
}
