//! Attributional self-consistency engine.

pub mod alignment;
pub mod attribution;
pub mod bank;
pub mod error;
pub mod eval;
pub mod numfmt;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod task;
pub mod train;
pub mod tokens;
pub mod toylm;

pub use error::{Error, Result};
