//! Command-line surface for the XCB experiments: corpus generation,
//! training, evaluation and the activation ablation.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;

pub use commands::{exit_code, run, Cli};
pub use config::{EvalConfig, PretrainConfig, RunConfig, Variant};
