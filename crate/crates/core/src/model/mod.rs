//! The contextualised recognizer: encoder → (adapter + merge gate) → CIF
//! predictor → NAR decoder, with a hotword biasing branch.

mod checkpoint;
pub mod cif;
mod config;
mod network;
mod params;

#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry, BLOB_FILE, MANIFEST_FILE};
pub use config::{InferenceMode, ModelConfig};
pub use network::{BiasOutput, CifOutput, GateOutput, GradPolicy, Inference, Model, Session};
pub use params::{param_manifest, ModelParams, XCB_PREFIX};
