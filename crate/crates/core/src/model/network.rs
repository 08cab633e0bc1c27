use std::collections::HashMap;

use super::cif::{fire_frames, inference_intervals, training_intervals};
use super::config::{InferenceMode, ModelConfig};
use super::params::ModelParams;
use crate::data::{HotwordList, TokenId, Vocabulary};
use crate::error::{Result, XcbError};
use crate::numerics::{Tape, Tensor, Var};

/// Which parameters receive gradients when bound onto a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradPolicy {
    All,
    None,
    /// Only adapter and gate tensors (backbone frozen).
    XcbOnly,
}

/// Lazily binds parameters onto a tape, one leaf per name.
pub struct Session<'p> {
    params: &'p ModelParams,
    policy: GradPolicy,
    bound: HashMap<String, Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ModelParams, policy: GradPolicy) -> Self {
        Self {
            params,
            policy,
            bound: HashMap::new(),
        }
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| XcbError::Config(format!("model has no parameter {name}")))?;
        let trainable = match self.policy {
            GradPolicy::All => true,
            GradPolicy::None => false,
            GradPolicy::XcbOnly => ModelParams::is_xcb_name(name),
        };
        let v = tape.leaf(t, trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Every parameter bound so far with its leaf.
    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    pub e_lb: Var,
    pub g_h: Var,
    pub g_lba: Var,
}

#[derive(Debug, Clone)]
pub struct CifOutput {
    /// `[L, d]` integrated token embeddings.
    pub fired: Var,
    /// `[T, 1]` raw per-frame weights before any rescaling.
    pub weights: Var,
    /// Scalar sum of the raw weights.
    pub weight_sum: Var,
    pub fire_frames: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct BiasOutput {
    pub logits: Var,
    /// `[L, N+1]` attention over hotwords plus the no-bias row.
    pub attention: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub tokens: Vec<TokenId>,
    /// `[L, V]` merged logits, `None` when the predictor fired nothing.
    pub logits: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn has_xcb(&self) -> bool {
        self.config.xcb
    }

    pub fn session(&self, policy: GradPolicy) -> Session<'_> {
        Session::new(&self.params, policy)
    }

    fn linear(&self, tape: &mut Tape, s: &mut Session, x: Var, prefix: &str) -> Result<Var> {
        let w = s.var(tape, &format!("{prefix}.w"))?;
        let b = s.var(tape, &format!("{prefix}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    fn norm(&self, tape: &mut Tape, s: &mut Session, x: Var, prefix: &str) -> Result<Var> {
        let g = s.var(tape, &format!("{prefix}.g"))?;
        let b = s.var(tape, &format!("{prefix}.b"))?;
        tape.layernorm(x, g, b)
    }

    fn ffn(&self, tape: &mut Tape, s: &mut Session, x: Var, prefix: &str) -> Result<Var> {
        let w1 = s.var(tape, &format!("{prefix}.w1"))?;
        let b1 = s.var(tape, &format!("{prefix}.b1"))?;
        let w2 = s.var(tape, &format!("{prefix}.w2"))?;
        let b2 = s.var(tape, &format!("{prefix}.b2"))?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h)?;
        let y = tape.matmul(h, w2)?;
        tape.add(y, b2)
    }

    /// Single-head scaled dot-product attention; returns `(output, weights)`.
    fn attention(&self, tape: &mut Tape, s: &mut Session, q_in: Var, kv_in: Var, prefix: &str) -> Result<(Var, Var)> {
        let wq = s.var(tape, &format!("{prefix}.wq"))?;
        let wk = s.var(tape, &format!("{prefix}.wk"))?;
        let wv = s.var(tape, &format!("{prefix}.wv"))?;
        let wo = s.var(tape, &format!("{prefix}.wo"))?;
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (self.config.d_model as f64).sqrt())?;
        let att = tape.softmax(scores)?;
        let ctx = tape.matmul(att, v)?;
        Ok((tape.matmul(ctx, wo)?, att))
    }

    fn check_width(&self, tape: &Tape, x: Var, what: &str) -> Result<()> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.config.d_model {
            return Err(XcbError::Dimension(format!(
                "{what} expects [*, {}], got {s:?}",
                self.config.d_model
            )));
        }
        Ok(())
    }

    /// Acoustic features `[T, d_feat]` → hidden representation `H` `[T, d_model]`.
    pub fn encode(&self, tape: &mut Tape, s: &mut Session, features: &Tensor) -> Result<Var> {
        let shape = features.shape();
        if shape.len() != 2 || shape[1] != self.config.d_feat {
            return Err(XcbError::Input(format!(
                "features must be [T, {}], got {shape:?}",
                self.config.d_feat
            )));
        }
        let t = shape[0];
        let feats = tape.constant(features);
        let mut x = self.linear(tape, s, feats, "encoder.in")?;
        if self.config.use_positional {
            if t > self.config.max_positions {
                return Err(XcbError::Input(format!(
                    "{t} frames exceed max_positions {}",
                    self.config.max_positions
                )));
            }
            let pos = s.var(tape, "encoder.pos")?;
            let idx: Vec<usize> = (0..t).collect();
            let p = tape.gather_rows(pos, &idx)?;
            x = tape.add(x, p)?;
        }
        let half = (self.config.conv_kernel / 2) as isize;
        for i in 0..self.config.encoder_layers {
            let y = self.norm(tape, s, x, &format!("encoder.{i}.ln1"))?;
            let mut conv = None;
            for j in 0..self.config.conv_kernel {
                let shifted = tape.shift_rows(y, j as isize - half)?;
                let w = s.var(tape, &format!("encoder.{i}.conv.w{j}"))?;
                let term = tape.matmul(shifted, w)?;
                conv = Some(match conv {
                    None => term,
                    Some(acc) => tape.add(acc, term)?,
                });
            }
            let b = s.var(tape, &format!("encoder.{i}.conv.b"))?;
            let c = tape.add(conv.expect("kernel width is at least 1"), b)?;
            let c = tape.relu(c)?;
            x = tape.add(x, c)?;
            let y = self.norm(tape, s, x, &format!("encoder.{i}.ln2"))?;
            let f = self.ffn(tape, s, y, &format!("encoder.{i}.ffn"))?;
            x = tape.add(x, f)?;
        }
        self.norm(tape, s, x, "encoder.ln")
    }

    /// Language-biasing adapter: down-projection → layernorm → ReLU →
    /// up-projection → layernorm.
    pub fn lb_adapter(&self, tape: &mut Tape, s: &mut Session, h: Var) -> Result<Var> {
        self.check_width(tape, h, "lb_adapter")?;
        let x = self.linear(tape, s, h, "xcb.adapter.down")?;
        let x = self.norm(tape, s, x, "xcb.adapter.ln1")?;
        let x = tape.relu(x)?;
        let x = self.linear(tape, s, x, "xcb.adapter.up")?;
        self.norm(tape, s, x, "xcb.adapter.ln2")
    }

    /// `E_lb = H + g_H ⊙ H + g_lba ⊙ H_lba` with sigmoid gates from separate
    /// linear projections of each input.
    pub fn bm_gate(&self, tape: &mut Tape, s: &mut Session, h: Var, h_lba: Var) -> Result<GateOutput> {
        self.check_width(tape, h, "bm_gate")?;
        if tape.shape(h) != tape.shape(h_lba) {
            return Err(XcbError::Dimension(format!(
                "bm_gate inputs {:?} vs {:?}",
                tape.shape(h),
                tape.shape(h_lba)
            )));
        }
        let wh = s.var(tape, "xcb.gate.w_h")?;
        let bh = s.var(tape, "xcb.gate.b_h")?;
        let wl = s.var(tape, "xcb.gate.w_lba")?;
        let bl = s.var(tape, "xcb.gate.b_lba")?;
        let zh = tape.matmul(h, wh)?;
        let zh = tape.add(zh, bh)?;
        let g_h = tape.sigmoid(zh)?;
        let zl = tape.matmul(h_lba, wl)?;
        let zl = tape.add(zl, bl)?;
        let g_lba = tape.sigmoid(zl)?;
        let scaled_h = tape.mul(g_h, h)?;
        let scaled_lba = tape.mul(g_lba, h_lba)?;
        let e = tape.add(h, scaled_h)?;
        let e_lb = tape.add(e, scaled_lba)?;
        Ok(GateOutput { e_lb, g_h, g_lba })
    }

    /// Representation the predictor consumes under `mode`. A model without
    /// the XCB module always passes `H` through.
    pub fn predictor_input(&self, tape: &mut Tape, s: &mut Session, h: Var, mode: InferenceMode) -> Result<Var> {
        match mode {
            InferenceMode::Active if self.has_xcb() => {
                let h_lba = self.lb_adapter(tape, s, h)?;
                Ok(self.bm_gate(tape, s, h, h_lba)?.e_lb)
            }
            _ => Ok(h),
        }
    }

    /// Per-frame firing weights `sigmoid(E·w + b)`, shape `[T, 1]`.
    pub fn predictor_weights(&self, tape: &mut Tape, s: &mut Session, e: Var) -> Result<Var> {
        self.check_width(tape, e, "predictor")?;
        let z = self.linear(tape, s, e, "predictor")?;
        tape.sigmoid(z)
    }

    /// CIF. With `target_len` the weights are rescaled so exactly that many
    /// tokens fire; without it tokens fire on threshold crossings plus an
    /// optional tail token.
    pub fn cif_predict(&self, tape: &mut Tape, s: &mut Session, e: Var, target_len: Option<usize>) -> Result<CifOutput> {
        let weights = self.predictor_weights(tape, s, e)?;
        let weight_sum = tape.sum(weights)?;
        let theta = self.config.cif_threshold;
        let t = tape.shape(e)[0];
        let (fire_w, intervals) = match target_len {
            Some(0) => return Err(XcbError::Input("target_len must be positive".into())),
            Some(len) => {
                let inv = tape.reciprocal(weight_sum)?;
                let norm = tape.mul_scalar_var(weights, inv)?;
                let rescaled = tape.scale(norm, len as f64 * theta)?;
                (rescaled, training_intervals(len, theta))
            }
            None => {
                let iv = inference_intervals(tape.value(weights).data(), theta, self.config.cif_tail);
                if iv.is_empty() {
                    return Err(XcbError::EmptyFiring(tape.value(weight_sum).item()));
                }
                (weights, iv)
            }
        };
        let flat = tape.reshape(fire_w, vec![t])?;
        let frames = fire_frames(tape.value(flat).data(), &intervals);
        let fired = tape.integrate_fire(e, flat, &intervals)?;
        Ok(CifOutput {
            fired,
            weights,
            weight_sum,
            fire_frames: frames,
        })
    }

    /// Hotword phrases → `[N+1, d]`: mean token embedding per phrase, a
    /// linear projection, then the learned no-bias row at index `N`.
    pub fn embed_hotwords(&self, tape: &mut Tape, s: &mut Session, list: &HotwordList) -> Result<Var> {
        if list.len() > self.config.max_hotwords {
            return Err(XcbError::Input(format!(
                "{} hotwords exceed max_hotwords {}",
                list.len(),
                self.config.max_hotwords
            )));
        }
        let nobias = s.var(tape, "bias.nobias")?;
        let phrases = list.phrases();
        if phrases.is_empty() {
            return Ok(nobias);
        }
        let table = s.var(tape, "bias.embed")?;
        let mut rows = Vec::with_capacity(phrases.len());
        for p in phrases {
            if p.tokens.is_empty() {
                return Err(XcbError::Input("empty hotword phrase".into()));
            }
            if let Some(bad) = p.tokens.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(XcbError::Input(format!("hotword token {bad} outside vocabulary")));
            }
            let emb = tape.gather_rows(table, &p.tokens)?;
            rows.push(tape.mean_rows(emb)?);
        }
        let stacked = tape.concat_rows(&rows)?;
        let projected = self.linear(tape, s, stacked, "bias.proj")?;
        tape.concat_rows(&[projected, nobias])
    }

    /// Cross-attention from acoustic tokens to hotword embeddings, then the
    /// biasing output head.
    pub fn bias_decode(&self, tape: &mut Tape, s: &mut Session, acoustic: Var, hotwords: Var) -> Result<BiasOutput> {
        self.check_width(tape, acoustic, "bias_decode")?;
        self.check_width(tape, hotwords, "bias_decode hotwords")?;
        let q = self.norm(tape, s, acoustic, "bias.ln_q")?;
        let (ctx, attention) = self.attention(tape, s, q, hotwords, "bias.attn")?;
        let z = tape.add(acoustic, ctx)?;
        let z = self.norm(tape, s, z, "bias.ln")?;
        let logits = self.linear(tape, s, z, "bias.out")?;
        Ok(BiasOutput { logits, attention })
    }

    /// Non-autoregressive decoder over fired tokens (no causal mask).
    pub fn decode(&self, tape: &mut Tape, s: &mut Session, acoustic: Var) -> Result<Var> {
        self.check_width(tape, acoustic, "decode")?;
        let mut x = acoustic;
        for i in 0..self.config.decoder_layers {
            let y = self.norm(tape, s, x, &format!("decoder.{i}.ln1"))?;
            let (a, _) = self.attention(tape, s, y, y, &format!("decoder.{i}.attn"))?;
            x = tape.add(x, a)?;
            let y = self.norm(tape, s, x, &format!("decoder.{i}.ln2"))?;
            let f = self.ffn(tape, s, y, &format!("decoder.{i}.ffn"))?;
            x = tape.add(x, f)?;
        }
        let y = self.norm(tape, s, x, "decoder.ln")?;
        self.linear(tape, s, y, "decoder.out")
    }

    pub fn infer(&self, features: &Tensor, hotwords: &HotwordList, mode: InferenceMode) -> Result<Vec<TokenId>> {
        Ok(self.infer_detailed(features, hotwords, mode)?.tokens)
    }

    /// Full decode: argmax of `asr_logits + λ·bias_logits` per fired
    /// position. The no-bias class is never emitted; `<pad>`/`<unk>` are
    /// stripped from the output.
    pub fn infer_detailed(&self, features: &Tensor, hotwords: &HotwordList, mode: InferenceMode) -> Result<Inference> {
        let mut tape = Tape::new();
        let mut s = self.session(GradPolicy::None);
        let h = self.encode(&mut tape, &mut s, features)?;
        let e = self.predictor_input(&mut tape, &mut s, h, mode)?;
        let cif = match self.cif_predict(&mut tape, &mut s, e, None) {
            Ok(c) => c,
            Err(XcbError::EmptyFiring(_)) => {
                return Ok(Inference {
                    tokens: Vec::new(),
                    logits: None,
                })
            }
            Err(err) => return Err(err),
        };
        let asr = self.decode(&mut tape, &mut s, cif.fired)?;
        let hw = self.embed_hotwords(&mut tape, &mut s, hotwords)?;
        let bias = self.bias_decode(&mut tape, &mut s, cif.fired, hw)?;
        let scaled = tape.scale(bias.logits, self.config.bias_lambda)?;
        let merged = tape.add(asr, scaled)?;
        let mut logits = tape.value(merged).clone();
        let v = logits.last_dim();
        for r in 0..logits.rows() {
            logits.data_mut()[r * v + Vocabulary::NO_BIAS] = f64::NEG_INFINITY;
        }
        let tokens = logits
            .argmax_rows()
            .into_iter()
            .filter(|&id| id != Vocabulary::PAD && id != Vocabulary::UNK)
            .collect();
        Ok(Inference {
            tokens,
            logits: Some(tape.value(merged).clone()),
        })
    }
}
