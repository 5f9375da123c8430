use cueflow::corpus::{CueVocab, EmbeddingTable, TrainingInstance, Vocab};
use cueflow::model::{ModelBundle, ModelDims, PreparedInstance};
use cueflow::nn::{AdamConfig, AdamState};
use cueflow::reward::{discounted_return, effectiveness, RewardModel, RewardWeights};
use cueflow::rng::{rng_from, Choice};
use cueflow::simulator::{simulate, DullSet, SimulationConfig};
use cueflow::trainer::{leave_one_out_baselines, policy_gradient_step, rollout, supervised_loss, PolicySample};
use proptest::prelude::*;
use rand::Rng;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn bundle(seed: u64) -> ModelBundle {
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::from_tokens(words.clone());
    let cues = CueVocab::from_entries(words.into_iter().take(4).map(|w| (w, 1)));
    ModelBundle::new(vocab, cues, ModelDims { embed: 4, hidden: 6, topic_hidden: 5 }, true, seed)
}

fn rewards() -> RewardModel {
    let mut t = EmbeddingTable::new(3);
    for i in 0..8 {
        let a = i as f64;
        t.insert(format!("w{i}"), vec![a.cos(), a.sin(), 0.5 - (i % 2) as f64]).unwrap();
    }
    RewardModel::with_embedding_scorer(t, RewardWeights::default())
}

fn instance(rng: &mut impl Rng) -> TrainingInstance {
    let mut words = |n: usize| -> Vec<String> { (0..n).map(|_| format!("w{}", rng.gen_range(0..8))).collect() };
    let older = words(3);
    let newer = words(2);
    let query = [older.clone(), newer].concat();
    TrainingInstance {
        query,
        query_split: older.len(),
        history_cues: vec!["<ept>".into(), "w1".into()],
        gold_cue: "w2".into(),
        reply: toks("w2 w3"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn supervised_loss_is_non_negative(seed in 0u64..10_000) {
        let b = bundle(seed);
        let mut rng = rng_from(seed, &[]);
        let inst = PreparedInstance {
            query: (0..rng.gen_range(0..6)).map(|_| rng.gen_range(0..b.vocab.len())).collect(),
            history: (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..b.cues.len())).collect(),
            gold: rng.gen_range(0..b.cues.len()),
            reply: (0..rng.gen_range(0..6)).map(|_| rng.gen_range(0..b.vocab.len())).collect(),
        };
        let (loss, _) = supervised_loss(&inst, &b, seed % 2 == 0).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn stored_return_matches_rewards(seed in 0u64..10_000, turns in 1usize..5) {
        let b = bundle(seed);
        let r = rewards();
        let mut rng = rng_from(seed, &[1]);
        let inst = instance(&mut rng);
        let t = rollout(&inst, &b, &r, turns, &mut rng).unwrap();
        prop_assert_eq!(t.steps.len(), turns);
        prop_assert_eq!(t.ret, discounted_return(&t.rewards(), r.weights.gamma));
    }

    #[test]
    fn policy_updates_leave_generator_untouched(seed in 0u64..10_000, steps in 1usize..6) {
        let mut b = bundle(seed);
        let before = b.checkpoint();
        let original = b.store.clone();
        let mut adam = AdamState::new(&b.store, b.policy_params(), AdamConfig::with_lr(0.05));
        let mut rng = rng_from(seed, &[2]);
        for _ in 0..steps {
            let inst = b.prepare(&instance(&mut rng));
            let samples: Vec<PolicySample> = (0..4)
                .map(|_| PolicySample {
                    query: inst.query.clone(),
                    history: inst.history.clone(),
                    action: rng.gen_range(0..b.cues.len()),
                    advantage: rng.gen_range(-1.0..1.0),
                })
                .collect();
            policy_gradient_step(&mut b, &samples, &mut adam).unwrap();
        }
        let after = b.checkpoint();
        prop_assert_eq!(before.section_bytes("generator"), after.section_bytes("generator"));
        for (id, p) in b.store.iter() {
            if !p.name.starts_with("policy.") {
                prop_assert_eq!(b.store.value(id), original.value(id));
            }
        }
    }

    #[test]
    fn effectiveness_is_a_bounded_log(cue in 0usize..8, a in 0usize..8, c in 0usize..8) {
        let r = rewards();
        let eps = r.weights.epsilon;
        let r1 = effectiveness(&format!("w{cue}"), &[format!("w{a}")], &[format!("w{c}")], &r.table, eps);
        prop_assert!(r1 <= 1e-12 && r1 >= 2.0 * eps.ln() - 1e-12);
        if cue == a && cue == c {
            prop_assert!(r1.abs() < 1e-12);
        }
    }

    #[test]
    fn default_relevance_in_unit_interval(seed in 0u64..10_000) {
        let r = rewards();
        let mut rng = rng_from(seed, &[3]);
        let inst = instance(&mut rng);
        let (older, newer) = inst.context_utterances();
        let b = r.score("w1", &inst.reply, &[older, newer]);
        prop_assert!((0.0..=1.0).contains(&b.r2));
    }
}

#[test]
fn baseline_reduces_variance_on_a_bandit() {
    // Score-function estimate of the gradient w.r.t. the logits of a fixed
    // softmax, with and without the leave-one-out baseline.
    let probs = [0.2, 0.5, 0.3];
    let returns_of = [1.0, 0.0, 0.5];
    let mut rng = rng_from(5, &[]);
    let estimate = |rng: &mut cueflow::rng::Rng, centred: bool| -> Vec<f64> {
        let actions: Vec<usize> = (0..5).map(|_| Choice::Sample(&mut *rng).pick(&probs)).collect();
        let returns: Vec<f64> = actions.iter().map(|&a| returns_of[a]).collect();
        let baselines = leave_one_out_baselines(&returns);
        let mut g = vec![0.0; 3];
        for (k, &a) in actions.iter().enumerate() {
            let w = if centred { returns[k] - baselines[k] } else { returns[k] };
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += w * (f64::from(j == a) - probs[j]) / 5.0;
            }
        }
        g
    };
    let spread = |samples: &[Vec<f64>]| -> f64 {
        let n = samples.len() as f64;
        (0..3)
            .map(|j| {
                let m = samples.iter().map(|s| s[j]).sum::<f64>() / n;
                samples.iter().map(|s| (s[j] - m).powi(2)).sum::<f64>() / n
            })
            .sum()
    };
    let raw: Vec<Vec<f64>> = (0..4000).map(|_| estimate(&mut rng, false)).collect();
    let centred: Vec<Vec<f64>> = (0..4000).map(|_| estimate(&mut rng, true)).collect();
    assert!(spread(&centred) < spread(&raw), "{} vs {}", spread(&centred), spread(&raw));
}

#[test]
fn simulation_is_byte_identical_across_runs() {
    let b = bundle(9);
    let r = rewards();
    let dull = DullSet::new(vec![toks("w0")], None);
    let cfg = SimulationConfig {
        sample_replies: true,
        ..SimulationConfig::default()
    };
    let run = || {
        let log = simulate(vec![toks("w1 w2"), toks("w3")], vec![0, 1], &b, &r, &dull, &cfg, 42).unwrap();
        serde_json::to_vec(&log).unwrap()
    };
    assert_eq!(run(), run());
}
