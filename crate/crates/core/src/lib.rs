//! Cross-lingual contextual biasing (XCB) for a small CIF-based
//! non-autoregressive speech recognizer.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: `f64` tensors and a reverse-mode tape.
//! - [`model`]: encoder, language-biasing adapter, merge gate, CIF predictor,
//!   NAR decoder and the hotword biasing branch.
//! - [`data`]: synthetic bilingual corpus, L1 masking, hotword lists.
//! - [`training`]: loss composition and the Adam training loop.
//! - [`metrics`]: mixed error rate and biased-span error rates / precision / recall.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Result, XcbError};
