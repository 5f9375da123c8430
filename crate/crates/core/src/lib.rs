pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod generator;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod simulator;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use config::{Mode, RunConfig};
pub use corpus::{CueVocab, EmbeddingTable, Session, TrainingInstance, Vocab};
pub use dialogue::{Conversation, Turn};
pub use eval::MetricsReport;
pub use model::{ModelBundle, ModelDims};
pub use reward::{RewardModel, RewardWeights};
pub use simulator::{ConversationLog, SimulationConfig, Termination};
