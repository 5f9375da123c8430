//! Fixtures shared by the benchmarks: a model over the toy domain at the
//! default dimensions.

use cueflow::corpus::{
    build_cue_vocab, build_vocab, make_instances, train_word_vectors, ContentLexicon, SgnsConfig, TrainingInstance,
};
use cueflow::model::{ModelBundle, ModelDims};
use cueflow::reward::{RewardModel, RewardWeights};
use cueflow::toy::{generate_sessions, lexicon_text, ToyConfig};

pub struct Fixture {
    pub bundle: ModelBundle,
    pub instances: Vec<TrainingInstance>,
    pub rewards: RewardModel,
}

pub fn fixture() -> Fixture {
    let sessions = generate_sessions(&ToyConfig { sessions: 40, ..ToyConfig::default() });
    let lexicon = ContentLexicon::parse_tagged(&lexicon_text(), "toy").expect("valid lexicon");
    let vocab = build_vocab(&sessions, 1);
    let cues = build_cue_vocab(&sessions, Some(&lexicon), 999).expect("cue words");
    let instances: Vec<TrainingInstance> = sessions.iter().flat_map(|s| make_instances(s, &cues)).collect();
    let table = train_word_vectors(&sessions, &vocab, &SgnsConfig { epochs: 1, ..SgnsConfig::default() });
    let bundle = ModelBundle::new(vocab, cues, ModelDims::default(), true, 0);
    Fixture {
        bundle,
        instances,
        rewards: RewardModel::with_embedding_scorer(table, RewardWeights::default()),
    }
}
