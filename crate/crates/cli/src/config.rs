//! Run configuration: one serialisable struct, read from and written to a
//! line-oriented `section.key=value` format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xcb_core::data::CorpusConfig;
use xcb_core::model::{InferenceMode, ModelConfig};
use xcb_core::training::TrainConfig;
use xcb_core::{Result, XcbError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Xcb,
}

impl FromStr for Variant {
    type Err = XcbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "xcb" => Ok(Variant::Xcb),
            other => Err(XcbError::Config(format!("unknown variant {other:?} (expected baseline or xcb)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::Xcb => "xcb",
        })
    }
}

/// Dominant-language pretraining of the backbone that both variants are
/// fine-tuned from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub n_utterances: usize,
    /// Zero skips pretraining; fine-tuning then starts from random weights.
    pub epochs: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_utterances: 1000,
            epochs: 8,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: InferenceMode,
    pub hotword_n: usize,
    /// Seeds the per-utterance hotword lists, independent of the training
    /// seed so every system is scored on the same lists.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: InferenceMode::Active,
            hotword_n: xcb_core::data::DEFAULT_HOTWORD_N,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Xcb,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.clone())),
    }
}

fn leaf_mut<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(root, |node, part| node.as_object_mut()?.get_mut(part))
}

/// Parses `raw` with the JSON type of the value it replaces.
fn typed(old: &Value, raw: &str, key: &str) -> Result<Value> {
    let bad = || XcbError::Config(format!("{key}: cannot parse {raw:?} as {}", kind(old)));
    Ok(match old {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let x: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => return Err(bad()),
    })
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_u64() => "an unsigned integer",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        _ => "a value",
    }
}

impl RunConfig {
    /// Applies `key=value` overrides on top of `self`.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for (key, raw) in pairs {
            let slot = leaf_mut(&mut root, key)
                .filter(|v| !v.is_object())
                .ok_or_else(|| XcbError::Config(format!("unknown config key {key:?}")))?;
            *slot = typed(slot, raw, key)?;
        }
        let cfg: RunConfig = serde_json::from_value(root).map_err(|e| XcbError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the `key=value` format. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| XcbError::Config(format!("line {}: expected key=value", i + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        Self::default().with_overrides(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key in sorted order, one per line.
    pub fn render(&self) -> String {
        let root = serde_json::to_value(self).expect("config serialises");
        let mut leaves = Vec::new();
        flatten("", &root, &mut leaves);
        leaves.sort_by(|a, b| a.0.cmp(&b.0));
        leaves
            .into_iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}={s}\n"),
                other => format!("{k}={other}\n"),
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.model.check_vocabulary(&self.corpus.vocabulary())?;
        if self.model.d_feat != self.corpus.d_feat {
            return Err(XcbError::Config(format!(
                "model.d_feat={} but corpus.d_feat={}",
                self.model.d_feat, self.corpus.d_feat
            )));
        }
        self.train.validate()?;
        if self.eval.hotword_n == 0 || self.eval.hotword_n > self.model.max_hotwords {
            return Err(XcbError::Config(format!(
                "eval.hotword_n must lie in 1..={}",
                self.model.max_hotwords
            )));
        }
        if !(self.pretrain.lr > 0.0 && self.pretrain.lr.is_finite()) {
            return Err(XcbError::Config("pretrain.lr must be positive".into()));
        }
        Ok(())
    }

    /// The effective settings of one variant: the baseline drops the XCB
    /// module and the secondary loss. Outputs record this resolved copy.
    pub fn for_variant(&self, variant: Variant) -> RunConfig {
        let mut cfg = self.clone();
        cfg.variant = variant;
        match variant {
            Variant::Baseline => {
                cfg.model.xcb = false;
                cfg.train.alpha = 0.0;
                cfg.train.freeze_backbone = false;
            }
            Variant::Xcb => cfg.model.xcb = true,
        }
        cfg
    }
}
