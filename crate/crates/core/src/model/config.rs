use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Result, XcbError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_feat: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    /// Width of the encoder's temporal convolution (odd).
    pub conv_kernel: usize,
    pub adapter_bottleneck: usize,
    /// Includes `<pad>`, `<unk>` and `<nobias>`.
    pub vocab_size: usize,
    pub cif_threshold: f64,
    /// Inference emits a final token when the leftover weight reaches this
    /// fraction of the threshold.
    pub cif_tail: f64,
    pub max_hotwords: usize,
    /// Weight of the biasing logits when merged into the ASR logits.
    pub bias_lambda: f64,
    pub max_positions: usize,
    pub use_positional: bool,
    /// Whether the adapter + merge gate exist at all.
    pub xcb: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_feat: 16,
            encoder_layers: 2,
            decoder_layers: 1,
            ffn_dim: 128,
            conv_kernel: 5,
            adapter_bottleneck: 16,
            vocab_size: Vocabulary::N_SPECIAL + 40 + 30,
            cif_threshold: 1.0,
            cif_tail: 0.5,
            max_hotwords: 60,
            bias_lambda: 1.0,
            max_positions: 256,
            use_positional: true,
            xcb: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(XcbError::Config(m.to_string()));
        if self.d_model == 0 || self.d_feat == 0 || self.ffn_dim == 0 {
            return err("model widths must be positive");
        }
        if self.adapter_bottleneck == 0 || self.adapter_bottleneck >= self.d_model {
            return err("adapter_bottleneck must lie in (0, d_model)");
        }
        if self.conv_kernel % 2 == 0 {
            return err("conv_kernel must be odd");
        }
        if self.vocab_size <= Vocabulary::N_SPECIAL {
            return err("vocab_size must cover the special tokens plus both languages");
        }
        if !(self.cif_threshold > 0.0) || !(0.0..=1.0).contains(&self.cif_tail) {
            return err("cif_threshold must be positive and cif_tail in [0, 1]");
        }
        if self.use_positional && self.max_positions == 0 {
            return err("max_positions must be positive");
        }
        if !self.bias_lambda.is_finite() {
            return err("bias_lambda must be finite");
        }
        Ok(())
    }

    /// Checks that a vocabulary fits this model exactly.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size {
            return Err(XcbError::Config(format!(
                "model vocabulary has {} entries, corpus vocabulary has {}",
                self.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }
}

/// Which representation feeds the predictor at decode time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Predictor consumes the gated merge of `H` and the adapter output.
    Active,
    /// Predictor consumes `H` directly; adapter and gate are never evaluated.
    Inactive,
}

impl std::str::FromStr for InferenceMode {
    type Err = XcbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "active" => Ok(Self::Active),
            "inactive" => Ok(Self::Inactive),
            other => Err(XcbError::Config(format!("unknown inference mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Active => "active",
            Self::Inactive => "inactive",
        })
    }
}
