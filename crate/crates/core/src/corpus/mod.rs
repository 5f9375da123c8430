//! Dataset ingestion, vocabularies, training instances and word vectors.

mod cue;
mod instance;
mod session;
mod vectors;
pub mod vocab;

pub use cue::{build_cue_vocab, extract_cue_word, reply_content_counts, ContentLexicon, CueVocab, PosClass, EPT_CUE};
pub use instance::{
    filter_instances, gold_index, make_instances, make_query, read_instances, write_instances, InstanceReport,
    TrainingInstance, MAX_PER_REPLY, MAX_QUERY_LEN, MAX_REPLY_LEN,
};
pub use session::{filter_sessions, parse_sessions, read_sessions, write_sessions, FilterReport, Session, SessionFile, Utterance};
pub use vectors::{train_word_vectors, EmbeddingTable, SgnsConfig};
pub use vocab::{build_vocab, Vocab};
