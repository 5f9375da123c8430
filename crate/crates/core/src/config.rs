//! Declarative run configuration (TOML), command-line overrides and the
//! system presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::reward::{RewardWeights, ScorerSpec};
use crate::simulator::SimulationConfig;
use crate::trainer::{RlConfig, SupervisedConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rlcw,
    RlcwE,
    RlcwR,
    S2s,
    S2sCw,
}

impl Mode {
    pub fn uses_rl(self) -> bool {
        !matches!(self, Mode::S2s | Mode::S2sCw)
    }

    pub fn cue_fusion(self) -> bool {
        self != Mode::S2s
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Rlcw => "rlcw",
            Mode::RlcwE => "rlcw_e",
            Mode::RlcwR => "rlcw_r",
            Mode::S2s => "s2s",
            Mode::S2sCw => "s2s_cw",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| Error::Config {
            key: "mode".into(),
            message: format!("unknown mode `{s}` (expected rlcw, rlcw_e, rlcw_r, s2s or s2s_cw)"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub dull: Option<PathBuf>,
    /// External word vectors; trained from the corpus when absent.
    pub vectors: Option<PathBuf>,
    /// Directory receiving every artifact.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "sessions.jsonl".into(),
            lexicon: None,
            stopwords: None,
            dull: None,
            vectors: None,
            out: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed: usize,
    pub hidden: usize,
    /// Defaults to `hidden`.
    pub topic_hidden: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed: 32,
            hidden: 64,
            topic_hidden: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub min_freq: u64,
    pub cue_vocab: usize,
    pub ept_cap: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            min_freq: 11,
            cue_vocab: 999,
            ept_cap: 1000,
            valid_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorSection {
    pub dim: usize,
    pub epochs: usize,
}

impl Default for VectorSection {
    fn default() -> Self {
        VectorSection { dim: 32, epochs: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// `embedding` or `dual_encoder:<path>`.
    pub scorer: String,
    pub scorer_epochs: usize,
    pub scorer_output: usize,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        RewardSection {
            alpha: w.alpha,
            gamma: w.gamma,
            epsilon: w.epsilon,
            scorer: "embedding".into(),
            scorer_epochs: 5,
            scorer_output: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub max_turns: usize,
    pub overlap_threshold: f64,
    pub gap_check: bool,
    pub sample_replies: bool,
    /// Upper bound on simulated dialogues (seeded from the test split).
    pub dialogues: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        SimulationSection {
            max_turns: d.max_turns,
            overlap_threshold: d.overlap_threshold,
            gap_check: d.gap_check,
            sample_replies: d.sample_replies,
            dialogues: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub paths: Paths,
    pub model: ModelSection,
    pub data: DataSection,
    pub vectors: VectorSection,
    pub supervised: SupervisedConfig,
    pub rl: RlConfig,
    pub reward: RewardSection,
    pub simulation: SimulationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::Rlcw,
            paths: Paths::default(),
            model: ModelSection::default(),
            data: DataSection::default(),
            vectors: VectorSection::default(),
            supervised: SupervisedConfig::default(),
            rl: RlConfig::default(),
            reward: RewardSection::default(),
            simulation: SimulationSection::default(),
        }
    }
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Parses a command-line value as a TOML scalar/array, falling back to a
/// bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(key, "malformed key"));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides and validates.
    /// Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, overrides: &[(String, String)], base: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error("<config>", e.message()))?;
        for (key, raw) in overrides {
            set_path(&mut table, key, parse_override_value(raw))?;
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            config_error(if key == "." { "<config>" } else { &key }, e.inner().message())
        })?;
        if let Some(base) = base {
            cfg.paths.resolve(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.rl.validate()?;
        self.simulation_config().validate()?;
        self.scorer()?;
        if self.supervised.batch == 0 {
            return Err(config_error("supervised.batch", "must be at least 1"));
        }
        if self.model.embed == 0 || self.model.hidden == 0 || self.model.topic_hidden == Some(0) {
            return Err(config_error("model", "dimensions must be positive"));
        }
        let split = self.data.valid_fraction + self.data.test_fraction;
        if !(self.data.valid_fraction >= 0.0 && self.data.test_fraction >= 0.0 && split < 1.0) {
            return Err(config_error("data.valid_fraction", "split fractions must be non-negative and sum below 1"));
        }
        if self.vectors.dim == 0 {
            return Err(config_error("vectors.dim", "must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed: self.model.embed,
            hidden: self.model.hidden,
            topic_hidden: self.model.topic_hidden.unwrap_or(self.model.hidden),
        }
    }

    /// Reward weights after the mode preset.
    pub fn weights(&self) -> RewardWeights {
        let alpha = match self.mode {
            Mode::RlcwE => 1.0,
            Mode::RlcwR => 0.0,
            _ => self.reward.alpha,
        };
        RewardWeights {
            alpha,
            gamma: self.reward.gamma,
            epsilon: self.reward.epsilon,
        }
    }

    pub fn scorer(&self) -> Result<ScorerSpec> {
        let spec: ScorerSpec = self.reward.scorer.parse()?;
        Ok(match spec {
            ScorerSpec::DualEncoder(p) if p.is_relative() => ScorerSpec::DualEncoder(self.paths.out.join(p)),
            other => other,
        })
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let r = &self.simulation;
        SimulationConfig {
            max_turns: r.max_turns,
            overlap_threshold: r.overlap_threshold,
            gap_check: r.gap_check,
            sample_replies: r.sample_replies,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out);
        for p in [&mut self.lexicon, &mut self.stopwords, &mut self.dull, &mut self.vectors].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn instances(&self) -> PathBuf {
        self.out.join("instances.jsonl")
    }
    pub fn valid_instances(&self) -> PathBuf {
        self.out.join("instances.valid.jsonl")
    }
    pub fn test_instances(&self) -> PathBuf {
        self.out.join("instances.test.jsonl")
    }
    pub fn vocab(&self) -> PathBuf {
        self.out.join("vocab.txt")
    }
    pub fn cues(&self) -> PathBuf {
        self.out.join("cues.tsv")
    }
    pub fn word_vectors(&self) -> PathBuf {
        self.out.join("vectors.txt")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.out.join("checkpoints")
    }
    pub fn pretrained(&self) -> PathBuf {
        self.checkpoints().join("pretrain.json")
    }
    pub fn trained(&self) -> PathBuf {
        self.checkpoints().join("model.json")
    }
    pub fn logs(&self) -> PathBuf {
        self.out.join("logs")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_declared_values() {
        let c = RunConfig::from_toml("", &[], None).unwrap();
        assert_eq!(c.supervised.batch, 64);
        assert_eq!(c.supervised.lr, 1e-4);
        assert_eq!((c.rl.turns, c.rl.samples), (3, 5));
        assert_eq!(c.weights(), RewardWeights { alpha: 0.2, gamma: 0.9, epsilon: 1e-6 });
        assert_eq!(c.simulation_config(), SimulationConfig::default());
        assert_eq!(c.dims(), ModelDims { embed: 32, hidden: 64, topic_hidden: 64 });
        assert_eq!(c.data.min_freq, 11);
        assert_eq!(c.data.cue_vocab, 999);
    }

    #[test]
    fn mode_presets() {
        let load = |m: &str| RunConfig::from_toml(&format!("mode = \"{m}\""), &[], None).unwrap();
        assert_eq!(load("rlcw_e").weights().alpha, 1.0);
        assert_eq!(load("rlcw_r").weights().alpha, 0.0);
        let s2s = load("s2s");
        assert!(!s2s.mode.cue_fusion() && !s2s.mode.uses_rl());
        let s2s_cw = load("s2s_cw");
        assert!(s2s_cw.mode.cue_fusion() && !s2s_cw.mode.uses_rl());
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn dotted_overrides() {
        let text = "seed = 1\n[rl]\nturns = 4\n";
        let ov = vec![
            ("rl.samples".to_string(), "7".to_string()),
            ("seed".to_string(), "9".to_string()),
            ("paths.out".to_string(), "elsewhere".to_string()),
            ("reward.scorer".to_string(), "dual_encoder:s.json".to_string()),
        ];
        let c = RunConfig::from_toml(text, &ov, None).unwrap();
        assert_eq!((c.seed, c.rl.turns, c.rl.samples), (9, 4, 7));
        assert_eq!(c.paths.out, PathBuf::from("elsewhere"));
        assert_eq!(c.scorer().unwrap(), ScorerSpec::DualEncoder("elsewhere/s.json".into()));
    }

    #[test]
    fn invalid_values_name_their_key() {
        let err = |text: &str| match RunConfig::from_toml(text, &[], None).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("unexpected {e}"),
        };
        assert_eq!(err("[rl]\nsamples = 1"), "rl.samples");
        assert_eq!(err("[reward]\nalpha = 2.0"), "reward.alpha");
        assert_eq!(err("[simulation]\noverlap_threshold = 0.0"), "simulation.overlap_threshold");
        assert_eq!(err("[reward]\nscorer = \"smn\""), "reward.scorer");
        assert!(err("[rl]\nbogus = 1").contains("bogus"));
        assert_eq!(err("[rl]\nturns = -4"), "rl.turns");
        assert_eq!(err("seed = \"x\""), "seed");
        assert_eq!(err("[simulation]\nmax_turns = \"x\""), "simulation.max_turns");
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let c = RunConfig::from_toml("[paths]\ncorpus = \"s.jsonl\"\nlexicon = \"/abs/l.tsv\"", &[], Some(Path::new("/cfg"))).unwrap();
        assert_eq!(c.paths.corpus, PathBuf::from("/cfg/s.jsonl"));
        assert_eq!(c.paths.lexicon, Some(PathBuf::from("/abs/l.tsv")));
        assert_eq!(c.paths.out, PathBuf::from("/cfg/out"));
    }
}
