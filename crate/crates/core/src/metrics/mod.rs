//! Mixed-script alignment, error rates restricted to hotword spans and
//! phrase-level precision/recall.

mod align;
mod rates;

pub use align::{align, tokenize_mixed, AlignOp, Alignment, Unit};
pub use rates::{biased_rates, bmer, hotword_spans, mer, occurrences, phrase_pr, BiasedRates, PhraseCounts, PhrasePr};

use serde::{Deserialize, Serialize};

use crate::data::{HotwordList, Token};
use crate::error::Result;

/// Corpus-level scores. Undefined rates are `None` (JSON `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mer: f64,
    pub bmer: Option<f64>,
    pub bcer: Option<f64>,
    pub n_bc: usize,
    pub bwer: Option<f64>,
    pub n_bw: usize,
    pub precision_l1: Option<f64>,
    pub recall_l1: Option<f64>,
    pub precision_l2: Option<f64>,
    pub recall_l2: Option<f64>,
}

impl EvalReport {
    pub fn compute(refs: &[Vec<Token>], hyps: &[Vec<Token>], lists: &[HotwordList]) -> Result<Self> {
        let mer = mer(refs, hyps)?;
        let b = biased_rates(refs, hyps, lists)?;
        let pr = phrase_pr(refs, hyps, lists)?;
        let bmer = bmer(b.bcer.unwrap_or(0.0), b.n_bc, b.bwer.unwrap_or(0.0), b.n_bw).ok();
        Ok(Self {
            mer,
            bmer,
            bcer: b.bcer,
            n_bc: b.n_bc,
            bwer: b.bwer,
            n_bw: b.n_bw,
            precision_l1: pr.l1.precision(),
            recall_l1: pr.l1.recall(),
            precision_l2: pr.l2.precision(),
            recall_l2: pr.l2.recall(),
        })
    }

    pub const CSV_HEADER: &'static str =
        "system,mer,bmer,bcer,n_bc,bwer,n_bw,precision_l1,recall_l1,precision_l2,recall_l2";

    /// One CSV row; undefined rates are left empty.
    pub fn csv_row(&self, system: &str) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{system},{},{},{},{},{},{},{},{},{},{}",
            self.mer,
            opt(self.bmer),
            opt(self.bcer),
            self.n_bc,
            opt(self.bwer),
            self.n_bw,
            opt(self.precision_l1),
            opt(self.recall_l1),
            opt(self.precision_l2),
            opt(self.recall_l2),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Lang, Phrase, Vocabulary};

    #[test]
    fn perfect_hypotheses_report() {
        let v = Vocabulary::synthetic(5, 5);
        let refs = vec![v.tokens_of(&[3, 4, 9, 10]), v.tokens_of(&[5, 11])];
        let lists = vec![
            HotwordList::from_phrases(vec![Phrase { lang: Lang::L2, tokens: vec![9, 10] }, Phrase { lang: Lang::L1, tokens: vec![3] }]),
            HotwordList::from_phrases(vec![Phrase { lang: Lang::L2, tokens: vec![11] }]),
        ];
        let r = EvalReport::compute(&refs, &refs, &lists).unwrap();
        assert_eq!(r.mer, 0.0);
        assert_eq!((r.bcer, r.n_bc, r.bwer, r.n_bw, r.bmer), (Some(0.0), 1, Some(0.0), 3, Some(0.0)));
        assert_eq!(r.recall_l2, Some(1.0));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        let row = r.csv_row("xcb");
        assert_eq!(row.split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    }
}
