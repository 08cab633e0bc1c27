use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Result, XcbError};
use crate::numerics::Tensor;

pub const XCB_PREFIX: &str = "xcb.";

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Const(f64),
}

/// Name, shape and initialiser of every parameter for a config. The names
/// and shapes depend on nothing but the config.
fn manifest_with_init(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f, v, h, b) = (c.d_model, c.d_feat, c.vocab_size, c.ffn_dim, c.adapter_bottleneck);
    let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());
    let zero = Init::Const(0.0);
    let mut m: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| m.push((name, shape, init));
    let ln = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str, w: usize| {
        push(format!("{p}.g"), vec![w], Init::Const(1.0));
        push(format!("{p}.b"), vec![w], Init::Const(0.0));
    };
    let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        push(format!("{p}.w1"), vec![d, h], fan(d));
        push(format!("{p}.b1"), vec![h], zero);
        push(format!("{p}.w2"), vec![h, d], fan(h));
        push(format!("{p}.b2"), vec![d], zero);
    };
    let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{p}.{w}"), vec![d, d], fan(d));
        }
    };

    push("encoder.in.w".into(), vec![f, d], fan(f));
    push("encoder.in.b".into(), vec![d], zero);
    if c.use_positional {
        push("encoder.pos".into(), vec![c.max_positions, d], Init::Normal(0.02));
    }
    for i in 0..c.encoder_layers {
        ln(&mut push, &format!("encoder.{i}.ln1"), d);
        for j in 0..c.conv_kernel {
            push(format!("encoder.{i}.conv.w{j}"), vec![d, d], fan(d * c.conv_kernel));
        }
        push(format!("encoder.{i}.conv.b"), vec![d], zero);
        ln(&mut push, &format!("encoder.{i}.ln2"), d);
        ffn(&mut push, &format!("encoder.{i}.ffn"));
    }
    ln(&mut push, "encoder.ln", d);

    if c.xcb {
        push("xcb.adapter.down.w".into(), vec![d, b], fan(d));
        push("xcb.adapter.down.b".into(), vec![b], zero);
        ln(&mut push, "xcb.adapter.ln1", b);
        push("xcb.adapter.up.w".into(), vec![b, d], fan(b));
        push("xcb.adapter.up.b".into(), vec![d], zero);
        ln(&mut push, "xcb.adapter.ln2", d);
        // Gates start nearly closed so E_lb ≈ H at initialisation.
        push("xcb.gate.w_h".into(), vec![d, d], Init::Normal(0.02));
        push("xcb.gate.b_h".into(), vec![d], Init::Const(-3.0));
        push("xcb.gate.w_lba".into(), vec![d, d], Init::Normal(0.02));
        push("xcb.gate.b_lba".into(), vec![d], Init::Const(-3.0));
    }

    push("predictor.w".into(), vec![d, 1], fan(d));
    // sigmoid(-ln 2) = 1/3: about one token per three frames.
    push("predictor.b".into(), vec![1], Init::Const(-std::f64::consts::LN_2));

    for i in 0..c.decoder_layers {
        ln(&mut push, &format!("decoder.{i}.ln1"), d);
        attn(&mut push, &format!("decoder.{i}.attn"));
        ln(&mut push, &format!("decoder.{i}.ln2"), d);
        ffn(&mut push, &format!("decoder.{i}.ffn"));
    }
    ln(&mut push, "decoder.ln", d);
    push("decoder.out.w".into(), vec![d, v], fan(d));
    push("decoder.out.b".into(), vec![v], zero);

    push("bias.embed".into(), vec![v, d], Init::Normal(1.0));
    push("bias.proj.w".into(), vec![d, d], fan(d));
    push("bias.proj.b".into(), vec![d], zero);
    push("bias.nobias".into(), vec![1, d], Init::Normal(1.0));
    ln(&mut push, "bias.ln_q", d);
    attn(&mut push, "bias.attn");
    ln(&mut push, "bias.ln", d);
    push("bias.out.w".into(), vec![d, v], fan(d));
    push("bias.out.b".into(), vec![v], zero);
    m
}

/// `(name, shape)` for every parameter of a config, in declaration order.
pub fn param_manifest(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    manifest_with_init(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn draw(shape: &[usize], init: Init, seed: u64, name: &str) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Const(c) => vec![c; n],
        Init::Normal(std) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("manifest shapes are positive")
}

/// Named parameter tensors. Iteration order is the sorted name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Seeded initialisation. Each tensor draws from its own stream keyed by
    /// name, so the backbone of an XCB model equals the baseline's for the
    /// same seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tensors = manifest_with_init(config)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = draw(&shape, init, seed, &name);
                (name, t)
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    /// Errors unless every manifest name is present with its declared shape
    /// and nothing else is.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let manifest = param_manifest(config);
        if manifest.len() != self.tensors.len() {
            return Err(XcbError::Config(format!(
                "expected {} parameter tensors, found {}",
                manifest.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in manifest {
            match self.tensors.get(&name) {
                None => return Err(XcbError::Config(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(XcbError::Config(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_xcb_name(name: &str) -> bool {
        name.starts_with(XCB_PREFIX)
    }

    pub fn has_xcb(&self) -> bool {
        self.tensors.keys().any(|k| Self::is_xcb_name(k))
    }

    /// Drops the adapter and gate tensors.
    pub fn without_xcb(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| !Self::is_xcb_name(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites every adapter/gate tensor with N(0, scale²) noise.
    pub fn randomize_xcb(&mut self, seed: u64, scale: f64) {
        for (name, t) in self.tensors.iter_mut().filter(|(k, _)| Self::is_xcb_name(k)) {
            let fresh = draw(t.shape(), Init::Normal(scale), seed, name);
            *t = fresh;
        }
    }
}
