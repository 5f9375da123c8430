//! The five batch stages. Each reads the artifacts of the previous one from
//! the configured output directory and writes its own.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{
    build_cue_vocab, build_vocab, filter_instances, filter_sessions, make_instances, read_instances, read_sessions,
    train_word_vectors, write_instances, ContentLexicon, CueVocab, EmbeddingTable, Session, SgnsConfig,
    TrainingInstance, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, markdown_table, MetricsReport};
use crate::model::ModelBundle;
use crate::reward::{train_dual_encoder, DualEncoder, DualEncoderConfig, RewardModel, ScorerSpec};
use crate::rng::rng_from;
use crate::simulator::{is_dull, simulate_instances, write_logs, ConversationLog, DullSet};
use crate::trainer::{pretrain, train_rl};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub sessions_read: usize,
    pub unreadable_lines: usize,
    pub dropped_short: usize,
    pub dropped_empty: usize,
    pub split_sessions: [usize; 3],
    pub vocab_size: usize,
    pub cue_vocab_size: usize,
    pub instances: [usize; 3],
    pub duplicates: usize,
    pub over_reply_cap: usize,
    pub over_ept_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub epoch_losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlSummary {
    pub iterations: usize,
    pub final_mean_return: Option<f64>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub dialogues: usize,
    pub avg_turns: f64,
    pub log: PathBuf,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// Truncating JSON-lines writer.
pub struct JsonLines(BufWriter<File>);

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        create_parent(path)?;
        Ok(JsonLines(BufWriter::new(File::create(path)?)))
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.0, record)?;
        self.0.write_all(b"\n")?;
        self.0.flush()?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Shuffles sessions and cuts them into train, validation and test parts.
pub fn split_sessions(mut sessions: Vec<Session>, valid: f64, test: f64, seed: u64) -> [Vec<Session>; 3] {
    sessions.shuffle(&mut rng_from(seed, &[100]));
    let n = sessions.len();
    let n_test = (n as f64 * test).floor() as usize;
    let n_valid = (n as f64 * valid).floor() as usize;
    let test_part = sessions.split_off(n - n_test);
    let valid_part = sessions.split_off(n - n_test - n_valid);
    [sessions, valid_part, test_part]
}

pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    let paths = &cfg.paths;
    require(&paths.corpus)?;
    let lexicon = ContentLexicon::load(paths.lexicon.as_deref(), paths.stopwords.as_deref())?;
    let file = read_sessions(&paths.corpus)?;
    let sessions_read = file.sessions.len() + file.skipped;
    let filtered = filter_sessions(file.sessions);
    let [train, valid, test] = split_sessions(
        filtered.sessions,
        cfg.data.valid_fraction,
        cfg.data.test_fraction,
        cfg.seed,
    );

    let vocab = build_vocab(&train, cfg.data.min_freq);
    let cues = build_cue_vocab(&train, Some(&lexicon), cfg.data.cue_vocab)?;

    let mut counts = [0; 3];
    let mut duplicates = 0;
    let mut over_reply_cap = 0;
    let mut over_ept_cap = 0;
    let outputs = [paths.instances(), paths.valid_instances(), paths.test_instances()];
    std::fs::create_dir_all(&paths.out)?;
    for (k, part) in [&train, &valid, &test].into_iter().enumerate() {
        let raw: Vec<TrainingInstance> = part.iter().flat_map(|s| make_instances(s, &cues)).collect();
        // The cue-less cap only shapes the training distribution.
        let cap = if k == 0 { cfg.data.ept_cap } else { usize::MAX };
        let report = filter_instances(raw, cap);
        duplicates += report.duplicates;
        over_reply_cap += report.over_reply_cap;
        over_ept_cap += report.over_ept_cap;
        counts[k] = report.instances.len();
        write_instances(&outputs[k], &report.instances)?;
    }

    vocab.save(&paths.vocab())?;
    cues.save(&paths.cues())?;
    let table = match &paths.vectors {
        Some(external) => {
            require(external)?;
            EmbeddingTable::load(external, Some(cfg.vectors.dim))?
        }
        None => train_word_vectors(
            &train,
            &vocab,
            &SgnsConfig {
                dim: cfg.vectors.dim,
                epochs: cfg.vectors.epochs,
                seed: cfg.seed,
                ..SgnsConfig::default()
            },
        ),
    };
    table.save(&paths.word_vectors())?;

    let summary = PreprocessSummary {
        sessions_read,
        unreadable_lines: file.skipped,
        dropped_short: filtered.dropped_short,
        dropped_empty: filtered.dropped_empty,
        split_sessions: [train.len(), valid.len(), test.len()],
        vocab_size: vocab.len(),
        cue_vocab_size: cues.len(),
        instances: counts,
        duplicates,
        over_reply_cap,
        over_ept_cap,
    };
    write_json(&paths.out.join("preprocess.json"), &summary)?;
    Ok(summary)
}

fn load_lexicons(cfg: &RunConfig) -> Result<(Vocab, CueVocab)> {
    require(&cfg.paths.vocab())?;
    require(&cfg.paths.cues())?;
    Ok((Vocab::load(&cfg.paths.vocab())?, CueVocab::load(&cfg.paths.cues())?))
}

pub fn load_vectors(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let path = cfg.paths.word_vectors();
    require(&path)?;
    EmbeddingTable::load(&path, Some(cfg.vectors.dim))
}

pub fn load_training_instances(cfg: &RunConfig) -> Result<Vec<TrainingInstance>> {
    require(&cfg.paths.instances())?;
    read_instances(&cfg.paths.instances())
}

fn dual_config(cfg: &RunConfig) -> DualEncoderConfig {
    DualEncoderConfig {
        output: cfg.reward.scorer_output,
        epochs: cfg.reward.scorer_epochs,
        seed: cfg.seed,
        ..DualEncoderConfig::default()
    }
}

/// Builds the reward model named by the configuration. A dual-encoder
/// scorer must already exist on disk.
pub fn reward_model(cfg: &RunConfig, table: EmbeddingTable) -> Result<RewardModel> {
    match cfg.scorer()? {
        ScorerSpec::Embedding => Ok(RewardModel::with_embedding_scorer(table, cfg.weights())),
        ScorerSpec::DualEncoder(path) => {
            require(&path)?;
            let table = Arc::new(table);
            let scorer = DualEncoder::load(&path, table.clone())?;
            Ok(RewardModel {
                table,
                scorer: Arc::new(scorer),
                weights: cfg.weights(),
            })
        }
    }
}

/// Supervised pre-training. Writes the checkpoint after every epoch so a
/// divergence leaves the last good model behind. Also trains the learned
/// relevance scorer when one is configured and not yet present.
pub fn pretrain_stage(cfg: &RunConfig) -> Result<PretrainSummary> {
    let (vocab, cues) = load_lexicons(cfg)?;
    let instances = load_training_instances(cfg)?;

    if let ScorerSpec::DualEncoder(path) = cfg.scorer()? {
        if !path.exists() {
            let table = Arc::new(load_vectors(cfg)?);
            let scorer = train_dual_encoder(&instances, table, &dual_config(cfg))?;
            create_parent(&path)?;
            scorer.save(&path)?;
        }
    }

    let mut bundle = ModelBundle::new(vocab, cues, cfg.dims(), cfg.mode.cue_fusion(), cfg.seed);
    let prepared: Vec<_> = instances.iter().map(|i| bundle.prepare(i)).collect();
    let checkpoint = cfg.paths.pretrained();
    create_parent(&checkpoint)?;
    let mut log = JsonLines::create(&cfg.paths.logs().join("pretrain.jsonl"))?;
    let epoch_losses = pretrain(&mut bundle, &prepared, &cfg.supervised, cfg.seed, |report, b| {
        log.write(report)?;
        b.save(&checkpoint)
    })?;
    if cfg.supervised.epochs == 0 {
        bundle.save(&checkpoint)?;
    }
    Ok(PretrainSummary { epoch_losses, checkpoint })
}

/// Policy fine-tuning. Systems without reinforcement learning pass the
/// pre-trained model through unchanged.
pub fn rl_stage(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<RlSummary> {
    let input = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.pretrained());
    require(&input)?;
    let output = cfg.paths.trained();
    create_parent(&output)?;
    if !cfg.mode.uses_rl() {
        if input != output {
            std::fs::copy(&input, &output)?;
        }
        return Ok(RlSummary {
            iterations: 0,
            final_mean_return: None,
            checkpoint: output,
        });
    }

    let mut bundle = ModelBundle::load(&input)?;
    let instances = load_training_instances(cfg)?;
    let rewards = reward_model(cfg, load_vectors(cfg)?)?;
    let mut log = JsonLines::create(&cfg.paths.logs().join("rl.jsonl"))?;
    let mut last = None;
    let every = cfg.rl.checkpoint_every;
    train_rl(&mut bundle, &instances, &rewards, &cfg.rl, cfg.seed, |entry, b| {
        log.write(entry)?;
        last = Some(entry.mean_return);
        if every > 0 && entry.iter % every == 0 {
            b.save(&output)?;
        }
        Ok(())
    })?;
    bundle.save(&output)?;
    Ok(RlSummary {
        iterations: cfg.rl.iterations,
        final_mean_return: last,
        checkpoint: output,
    })
}

pub fn dull_set(cfg: &RunConfig, vocab: Option<&Vocab>) -> Result<DullSet> {
    match &cfg.paths.dull {
        Some(path) => {
            require(path)?;
            DullSet::load(path, vocab)
        }
        None => Ok(DullSet::default_set(vocab)),
    }
}

/// Seeds for simulation: held-out positions whose last utterance is not
/// itself dull. Falls back to validation, then training data.
pub fn simulation_seeds(cfg: &RunConfig, dull: &DullSet) -> Result<Vec<TrainingInstance>> {
    for path in [cfg.paths.test_instances(), cfg.paths.valid_instances(), cfg.paths.instances()] {
        if !path.exists() {
            continue;
        }
        let seeds: Vec<TrainingInstance> = read_instances(&path)?
            .into_iter()
            .filter(|inst| !is_dull(&inst.context_utterances().1, dull))
            .take(cfg.simulation.dialogues)
            .collect();
        if !seeds.is_empty() {
            return Ok(seeds);
        }
    }
    Err(Error::Argument("no usable seed dialogues".into()))
}

pub fn simulate_stage(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<SimulateSummary> {
    let input = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.trained());
    require(&input)?;
    let bundle = ModelBundle::load(&input)?;
    let dull = dull_set(cfg, Some(&bundle.vocab))?;
    let seeds = simulation_seeds(cfg, &dull)?;
    let rewards = reward_model(cfg, load_vectors(cfg)?)?;
    let logs = simulate_instances(&seeds, &bundle, &rewards, &dull, &cfg.simulation_config(), cfg.seed)?;
    let log = cfg.paths.logs().join("simulate.jsonl");
    create_parent(&log)?;
    write_logs(&log, &logs)?;
    Ok(SimulateSummary {
        dialogues: logs.len(),
        avg_turns: crate::eval::avg_turns(&logs)?,
        log,
    })
}

/// Scores one or more labelled log files and writes `report.json` and
/// `report.md` to the output directory.
pub fn evaluate_stage(cfg: &RunConfig, inputs: &[(String, PathBuf)]) -> Result<Vec<(String, MetricsReport)>> {
    let table = load_vectors(cfg)?;
    let mut rows = Vec::with_capacity(inputs.len());
    for (label, path) in inputs {
        require(path)?;
        let logs: Vec<ConversationLog> = crate::simulator::read_logs(path)?;
        rows.push((label.clone(), evaluate(&logs, &table)?));
    }
    let as_map: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(l, r)| Ok((l.clone(), serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    write_json(&cfg.paths.out.join("report.json"), &as_map)?;
    std::fs::write(cfg.paths.out.join("report.md"), markdown_table(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;

    fn session(id: usize) -> Session {
        Session {
            id: id.to_string(),
            utterances: vec![Utterance::new(["a"]), Utterance::new(["b"])],
        }
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let sessions: Vec<Session> = (0..20).map(session).collect();
        let [train, valid, test] = split_sessions(sessions, 0.1, 0.1, 3);
        assert_eq!((train.len(), valid.len(), test.len()), (16, 2, 2));
        let mut ids: Vec<String> = train.iter().chain(&valid).chain(&test).map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        let again = split_sessions((0..20).map(session).collect(), 0.1, 0.1, 3);
        assert_eq!(again[2], test);
    }

    #[test]
    fn missing_corpus_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.paths.corpus = dir.path().join("absent.jsonl");
        cfg.paths.out = dir.path().join("out");
        assert!(matches!(preprocess(&cfg), Err(Error::MissingFile(_))));
        assert!(matches!(pretrain_stage(&cfg), Err(Error::MissingFile(_))));
        assert!(matches!(simulate_stage(&cfg, None), Err(Error::MissingFile(_))));
    }
}
