//! Minimal reverse-mode numerical core: tensors, parameters, LSTM cells,
//! softmax/cross-entropy, Adam and finite-difference checking. Gradients are
//! derived by hand per layer.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
mod param;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport};
pub use lstm::{lstm_step, LstmCache, LstmCell};
pub use ops::{cross_entropy, softmax};
pub use param::{Gradients, ParamId, ParamStore, Parameter, INIT_SCALE};
pub use tensor::Tensor;
