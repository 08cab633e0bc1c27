//! Loss composition, the secondary-language decoding branch and the
//! optimisation loop.

mod adam;
mod loss;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{asr_loss, bias_loss, bias_targets, build_losses, l2nd_loss, total_loss, LossBreakdown, LossOptions, LossVars};

use crate::data::{build_hotword_list, distractor_list, mix, HotwordList, Phrase, Utterance};
use crate::error::{Result, XcbError};
use crate::model::{GradPolicy, Model};
use crate::numerics::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Train only adapter and gate tensors.
    pub freeze_backbone: bool,
    /// Hotword list size per training utterance (target included).
    pub hotword_n: usize,
    pub l2nd_ignore_unk: bool,
    pub l2nd_stop_grad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 30,
            epochs: 10,
            alpha: 0.3,
            seed: 1,
            freeze_backbone: false,
            hotword_n: crate::data::DEFAULT_HOTWORD_N,
            l2nd_ignore_unk: false,
            l2nd_stop_grad: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(XcbError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(XcbError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(XcbError::Config("batch_size must be positive".into()));
        }
        if self.hotword_n == 0 {
            return Err(XcbError::Config("hotword_n must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            alpha: self.alpha,
            l2nd_ignore_unk: self.l2nd_ignore_unk,
            l2nd_stop_grad: self.l2nd_stop_grad,
        }
    }
}

/// Mean loss terms over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub l_asr: f64,
    pub l_bias: f64,
    pub l_ce_2nd: f64,
    pub l_total: f64,
}

/// Hotword list a training utterance sees in a given epoch: its L2 phrase
/// plus distractors, or only distractors when it has no L2 phrase.
pub fn training_hotwords(utt: &Utterance, index: usize, pool: &[Phrase], n: usize, seed: u64, epoch: usize) -> Result<HotwordList> {
    let s = mix(mix(seed, epoch as u64), index as u64);
    if utt.l2_phrases().is_empty() {
        distractor_list(pool, n, s)
    } else {
        build_hotword_list(utt, pool, n, s)
    }
}

/// Gradients of one utterance's `l_total` keyed by parameter name, with its
/// loss breakdown.
pub fn utterance_gradients(
    model: &Model,
    utt: &Utterance,
    hotwords: &HotwordList,
    opts: &LossOptions,
    policy: GradPolicy,
) -> Result<(LossBreakdown, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::new();
    let mut s = model.session(policy);
    let vars = build_losses(model, &mut tape, &mut s, utt, hotwords, opts)?;
    tape.backward(vars.l_total)?;
    let grads = s
        .bound()
        .filter_map(|(name, v)| tape.grad(v).map(|g| (name.to_string(), g.to_vec())))
        .collect();
    Ok((vars.breakdown(&tape, opts.alpha), grads))
}

/// Trains `model` in place and returns the per-epoch loss curve. Each epoch
/// is also passed to `sink` as soon as it completes.
pub fn train(
    model: &mut Model,
    utts: &[Utterance],
    pool: &[Phrase],
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochReport) -> Result<()>,
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    if utts.is_empty() {
        return Err(XcbError::Input("training corpus is empty".into()));
    }
    let policy = if cfg.freeze_backbone {
        if !model.has_xcb() {
            return Err(XcbError::Config("freeze_backbone leaves nothing to train without the XCB module".into()));
        }
        GradPolicy::XcbOnly
    } else {
        GradPolicy::All
    };
    let opts = cfg.loss_options();
    let mut adam = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..utts.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x6570_6f63 ^ epoch as u64));
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for &i in batch {
                let utt = &utts[i];
                let hw = training_hotwords(utt, i, pool, cfg.hotword_n, cfg.seed, epoch)?;
                let (lb, grads) = utterance_gradients(model, utt, &hw, &opts, policy).map_err(|e| match e {
                    XcbError::Numerical(msg) => XcbError::Numerical(format!("epoch {epoch}, utterance {}: {msg}", utt.id)),
                    other => other,
                })?;
                if !lb.l_total.is_finite() {
                    return Err(XcbError::Numerical(format!("epoch {epoch}, utterance {}: loss diverged", utt.id)));
                }
                for (s, v) in sums.iter_mut().zip([lb.l_asr, lb.l_bias, lb.l_ce_2nd, lb.l_total]) {
                    *s += v;
                }
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.values_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= scale));
            adam.update(&mut model.params, &acc);
        }
        let n = utts.len() as f64;
        let report = EpochReport {
            epoch,
            l_asr: sums[0] / n,
            l_bias: sums[1] / n,
            l_ce_2nd: sums[2] / n,
            l_total: sums[3] / n,
        };
        log::info!("epoch {epoch}: l_total {:.4}", report.l_total);
        sink(&report)?;
        curve.push(report);
    }
    Ok(curve)
}
