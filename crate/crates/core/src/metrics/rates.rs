use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::align::{align, tokenize_mixed, AlignOp, Unit};
use crate::data::{HotwordList, Lang, Phrase, Token, TokenId};
use crate::error::{Result, XcbError};

fn check_paired(refs: usize, hyps: usize, lists: Option<usize>) -> Result<()> {
    if refs != hyps || lists.is_some_and(|l| l != refs) {
        return Err(XcbError::Input(format!(
            "unpaired inputs: {refs} references, {hyps} hypotheses, {lists:?} hotword lists"
        )));
    }
    Ok(())
}

fn texts(units: &[Unit]) -> Vec<&str> {
    units.iter().map(|u| u.text.as_str()).collect()
}

/// Corpus-level mixed error rate: total edit cost over total reference units.
pub fn mer(refs: &[Vec<Token>], hyps: &[Vec<Token>]) -> Result<f64> {
    check_paired(refs.len(), hyps.len(), None)?;
    let (mut errors, mut total) = (0usize, 0usize);
    for (r, h) in refs.iter().zip(hyps) {
        let (ru, hu) = (tokenize_mixed(r), tokenize_mixed(h));
        errors += align(&texts(&ru), &texts(&hu)).cost();
        total += ru.len();
    }
    if total == 0 {
        return Err(XcbError::UndefinedMetric("mer over zero reference units".into()));
    }
    Ok(errors as f64 / total as f64)
}

/// Distinct listed phrases, in sorted order.
fn listed(list: &HotwordList) -> Vec<&Phrase> {
    list.phrases().into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Start positions of every (possibly overlapping) occurrence of `needle`.
pub fn occurrences(haystack: &[TokenId], needle: &[TokenId]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&s| haystack[s..s + needle.len()] == *needle)
        .collect()
}

/// Token spans of every listed phrase occurring in `reference`, with the
/// phrase language.
pub fn hotword_spans(reference: &[TokenId], list: &HotwordList) -> Vec<(Range<usize>, Lang)> {
    let mut spans = Vec::new();
    for p in listed(list) {
        for s in occurrences(reference, &p.tokens) {
            spans.push((s..s + p.tokens.len(), p.lang));
        }
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasedRates {
    pub bcer: Option<f64>,
    pub n_bc: usize,
    pub errors_bc: usize,
    pub bwer: Option<f64>,
    pub n_bw: usize,
    pub errors_bw: usize,
}

/// Errors restricted to reference units inside hotword spans. SUB and DEL
/// count against the span holding their reference unit; an INS counts
/// against the span of the closest preceding op that carries a reference
/// unit, and is ignored when that unit lies outside every span.
pub fn biased_rates(refs: &[Vec<Token>], hyps: &[Vec<Token>], lists: &[HotwordList]) -> Result<BiasedRates> {
    check_paired(refs.len(), hyps.len(), Some(lists.len()))?;
    let mut out = BiasedRates::default();
    for ((r, h), list) in refs.iter().zip(hyps).zip(lists) {
        let ids: Vec<TokenId> = r.iter().map(|t| t.id).collect();
        let mut token_lang: Vec<Option<Lang>> = vec![None; r.len()];
        for (span, lang) in hotword_spans(&ids, list) {
            token_lang[span].iter_mut().for_each(|slot| *slot = Some(lang));
        }
        let (ru, hu) = (tokenize_mixed(r), tokenize_mixed(h));
        let unit_lang: Vec<Option<Lang>> = ru.iter().map(|u| token_lang[u.token]).collect();
        for lang in unit_lang.iter().flatten() {
            match lang {
                Lang::L2 => out.n_bw += 1,
                _ => out.n_bc += 1,
            }
        }
        let mut anchor: Option<usize> = None;
        for op in align(&texts(&ru), &texts(&hu)).ops {
            if let Some(ri) = op.ref_index() {
                anchor = Some(ri);
            }
            let target = match op {
                AlignOp::Match { .. } => None,
                AlignOp::Sub { r, .. } | AlignOp::Del { r } => unit_lang[r],
                AlignOp::Ins { .. } => anchor.and_then(|a| unit_lang[a]),
            };
            match target {
                Some(Lang::L2) => out.errors_bw += 1,
                Some(_) => out.errors_bc += 1,
                None => {}
            }
        }
    }
    out.bcer = (out.n_bc > 0).then(|| out.errors_bc as f64 / out.n_bc as f64);
    out.bwer = (out.n_bw > 0).then(|| out.errors_bw as f64 / out.n_bw as f64);
    Ok(out)
}

/// Count-weighted mean of the two biased rates. A rate with zero count has
/// zero weight.
pub fn bmer(bcer: f64, n_bc: usize, bwer: f64, n_bw: usize) -> Result<f64> {
    match (n_bc, n_bw) {
        (0, 0) => Err(XcbError::UndefinedMetric("bmer with no biased reference units".into())),
        (_, 0) => Ok(bcer),
        (0, _) => Ok(bwer),
        _ => Ok((n_bc as f64 * bcer + n_bw as f64 * bwer) / (n_bc + n_bw) as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhraseCounts {
    /// Reference occurrences of listed phrases.
    pub ref_occurrences: usize,
    /// Of those, occurrences whose phrase appears anywhere in the hypothesis.
    pub recalled: usize,
    /// Hypothesis occurrences of listed phrases.
    pub hyp_occurrences: usize,
    /// Hypothesis occurrences paired one-to-one with a reference occurrence.
    pub matched: usize,
}

impl PhraseCounts {
    pub fn precision(&self) -> Option<f64> {
        (self.hyp_occurrences > 0).then(|| self.matched as f64 / self.hyp_occurrences as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.ref_occurrences > 0).then(|| self.recalled as f64 / self.ref_occurrences as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhrasePr {
    pub l1: PhraseCounts,
    pub l2: PhraseCounts,
}

pub fn phrase_pr(refs: &[Vec<Token>], hyps: &[Vec<Token>], lists: &[HotwordList]) -> Result<PhrasePr> {
    check_paired(refs.len(), hyps.len(), Some(lists.len()))?;
    let mut out = PhrasePr::default();
    for ((r, h), list) in refs.iter().zip(hyps).zip(lists) {
        let rid: Vec<TokenId> = r.iter().map(|t| t.id).collect();
        let hid: Vec<TokenId> = h.iter().map(|t| t.id).collect();
        for p in listed(list) {
            let in_ref = occurrences(&rid, &p.tokens).len();
            let in_hyp = occurrences(&hid, &p.tokens).len();
            let c = match p.lang {
                Lang::L2 => &mut out.l2,
                _ => &mut out.l1,
            };
            c.ref_occurrences += in_ref;
            if in_hyp > 0 {
                c.recalled += in_ref;
            }
            c.hyp_occurrences += in_hyp;
            c.matched += in_ref.min(in_hyp);
        }
    }
    Ok(out)
}
