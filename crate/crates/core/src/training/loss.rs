use serde::{Deserialize, Serialize};

use crate::data::{mask_l1, HotwordList, TokenId, Utterance, Vocabulary};
use crate::error::{Result, XcbError};
use crate::model::{GradPolicy, InferenceMode, Model, Session};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_asr: f64,
    pub l_bias: f64,
    pub l_ce_2nd: f64,
    pub alpha: f64,
    pub l_total: f64,
}

/// Switches for the loss graph beyond the weight `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub alpha: f64,
    /// Drop `<unk>` positions from the secondary-branch cross-entropy.
    pub l2nd_ignore_unk: bool,
    /// Keep secondary-branch gradients out of the shared predictor/decoder.
    pub l2nd_stop_grad: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            l2nd_ignore_unk: false,
            l2nd_stop_grad: false,
        }
    }
}

/// Scalar loss nodes of one utterance's graph.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_asr: Var,
    pub l_bias: Var,
    /// `None` for a model without the XCB module.
    pub l_ce_2nd: Option<Var>,
    pub l_total: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape, alpha: f64) -> LossBreakdown {
        LossBreakdown {
            l_asr: tape.value(self.l_asr).item(),
            l_bias: tape.value(self.l_bias).item(),
            l_ce_2nd: self.l_ce_2nd.map_or(0.0, |v| tape.value(v).item()),
            alpha,
            l_total: tape.value(self.l_total).item(),
        }
    }
}

/// Per-position bias-branch targets: the reference token wherever the
/// position lies inside an occurrence of a listed phrase, otherwise the
/// no-bias class.
pub fn bias_targets(reference: &[TokenId], hotwords: &HotwordList) -> Vec<TokenId> {
    let mut covered = vec![false; reference.len()];
    for p in hotwords.phrases() {
        let n = p.tokens.len();
        if n == 0 || n > reference.len() {
            continue;
        }
        for start in 0..=reference.len() - n {
            if reference[start..start + n] == p.tokens[..] {
                covered[start..start + n].iter_mut().for_each(|c| *c = true);
            }
        }
    }
    reference
        .iter()
        .zip(covered)
        .map(|(&id, c)| if c { id } else { Vocabulary::NO_BIAS })
        .collect()
}

fn reference(utt: &Utterance) -> Result<Vec<TokenId>> {
    if utt.tokens.is_empty() {
        return Err(XcbError::Input(format!("utterance {} has an empty reference", utt.id)));
    }
    Ok(utt.token_ids())
}

/// Builds every loss term on `tape`. The main path runs in active mode, so
/// a model with the XCB module predicts from `E_lb`; the secondary branch
/// feeds the adapter output straight to the shared predictor and decoder.
pub fn build_losses(
    model: &Model,
    tape: &mut Tape,
    s: &mut Session,
    utt: &Utterance,
    hotwords: &HotwordList,
    opts: &LossOptions,
) -> Result<LossVars> {
    if !(opts.alpha >= 0.0 && opts.alpha.is_finite()) {
        return Err(XcbError::Config(format!("alpha must be finite and >= 0, got {}", opts.alpha)));
    }
    let refs = reference(utt)?;
    let len = refs.len();
    let h = model.encode(tape, s, &utt.features)?;
    let (e, h_lba) = if model.has_xcb() {
        let h_lba = model.lb_adapter(tape, s, h)?;
        (model.bm_gate(tape, s, h, h_lba)?.e_lb, Some(h_lba))
    } else {
        (h, None)
    };

    let cif = model.cif_predict(tape, s, e, Some(len))?;
    let asr_logits = model.decode(tape, s, cif.fired)?;
    let ce = tape.cross_entropy(asr_logits, &refs, None)?;
    let offset = tape.add_scalar(cif.weight_sum, -(len as f64) * model.config.cif_threshold)?;
    let quantity = tape.abs(offset)?;
    let l_asr = tape.add(ce, quantity)?;

    let hw = model.embed_hotwords(tape, s, hotwords)?;
    let bias = model.bias_decode(tape, s, cif.fired, hw)?;
    let l_bias = tape.cross_entropy(bias.logits, &bias_targets(&refs, hotwords), None)?;

    let mut l_total = tape.add(l_asr, l_bias)?;
    let l_ce_2nd = match h_lba {
        Some(h_lba) => {
            let l2 = if opts.l2nd_stop_grad {
                let mut frozen = Session::new(&model.params, GradPolicy::None);
                l2nd_branch(model, tape, &mut frozen, h_lba, utt, opts)?
            } else {
                l2nd_branch(model, tape, s, h_lba, utt, opts)?
            };
            let weighted = tape.scale(l2, opts.alpha)?;
            l_total = tape.add(l_total, weighted)?;
            Some(l2)
        }
        None => None,
    };
    Ok(LossVars {
        l_asr,
        l_bias,
        l_ce_2nd,
        l_total,
    })
}

fn l2nd_branch(model: &Model, tape: &mut Tape, s: &mut Session, h_lba: Var, utt: &Utterance, opts: &LossOptions) -> Result<Var> {
    let masked: Vec<TokenId> = mask_l1(&utt.tokens).iter().map(|t| t.id).collect();
    let cif = model.cif_predict(tape, s, h_lba, Some(masked.len()))?;
    let logits = model.decode(tape, s, cif.fired)?;
    let ignore = opts.l2nd_ignore_unk.then_some(Vocabulary::UNK);
    match tape.cross_entropy(logits, &masked, ignore) {
        // Every position was <unk> and <unk> is ignored: nothing to learn.
        Err(XcbError::DegenerateLoss) => {
            let zero = tape.scale(logits, 0.0)?;
            let zero = tape.sum(zero)?;
            Ok(zero)
        }
        other => other,
    }
}

fn evaluate(model: &Model, utt: &Utterance, hotwords: &HotwordList, opts: &LossOptions) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let vars = build_losses(model, &mut tape, &mut s, utt, hotwords, opts)?;
    Ok(vars.breakdown(&tape, opts.alpha))
}

/// Decoder cross-entropy on target-length CIF tokens plus `|Σw − len·θ|`.
pub fn asr_loss(model: &Model, utt: &Utterance, mode: InferenceMode) -> Result<f64> {
    let refs = reference(utt)?;
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let h = model.encode(&mut tape, &mut s, &utt.features)?;
    let e = model.predictor_input(&mut tape, &mut s, h, mode)?;
    let cif = model.cif_predict(&mut tape, &mut s, e, Some(refs.len()))?;
    let logits = model.decode(&mut tape, &mut s, cif.fired)?;
    let ce = tape.cross_entropy(logits, &refs, None)?;
    let quantity = (tape.value(cif.weight_sum).item() - refs.len() as f64 * model.config.cif_threshold).abs();
    Ok(tape.value(ce).item() + quantity)
}

pub fn bias_loss(model: &Model, utt: &Utterance, hotwords: &HotwordList) -> Result<f64> {
    Ok(evaluate(model, utt, hotwords, &LossOptions::default())?.l_bias)
}

/// Secondary-branch loss; zero for a model without the XCB module.
pub fn l2nd_loss(model: &Model, utt: &Utterance, opts: &LossOptions) -> Result<f64> {
    Ok(evaluate(model, utt, &HotwordList::empty(), opts)?.l_ce_2nd)
}

pub fn total_loss(model: &Model, utt: &Utterance, hotwords: &HotwordList, opts: &LossOptions) -> Result<LossBreakdown> {
    evaluate(model, utt, hotwords, opts)
}
