//! The built-in toy language model: tensors, a reverse-mode tape, the
//! transformer itself, the synthetic multiple-choice task it learns, and
//! its training and checkpoint plumbing.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod pretrain;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use model::{AdapterConfig, ForwardOptions, GradScope, ModelConfig, ScoreItem, ToyModel};
pub use oracle::ToyOracle;
