use serde::{Deserialize, Serialize};

use crate::data::{Lang, Token};

/// One scoring unit: an L1 character or an L2 word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Unit {
    pub text: String,
    pub lang: Lang,
    /// Index of the token the unit came from.
    pub token: usize,
}

/// L1 tokens split into characters, L2 tokens stay whole, specials vanish.
pub fn tokenize_mixed(tokens: &[Token]) -> Vec<Unit> {
    let mut out = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        match t.lang {
            Lang::L1 => out.extend(t.surface.chars().map(|c| Unit {
                text: c.to_string(),
                lang: Lang::L1,
                token: i,
            })),
            Lang::L2 => out.push(Unit {
                text: t.surface.clone(),
                lang: Lang::L2,
                token: i,
            }),
            Lang::Special => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignOp {
    Match { r: usize, h: usize },
    Sub { r: usize, h: usize },
    Ins { h: usize },
    Del { r: usize },
}

impl AlignOp {
    pub fn ref_index(&self) -> Option<usize> {
        match *self {
            AlignOp::Match { r, .. } | AlignOp::Sub { r, .. } | AlignOp::Del { r } => Some(r),
            AlignOp::Ins { .. } => None,
        }
    }

    pub fn hyp_index(&self) -> Option<usize> {
        match *self {
            AlignOp::Match { h, .. } | AlignOp::Sub { h, .. } | AlignOp::Ins { h } => Some(h),
            AlignOp::Del { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        !matches!(self, AlignOp::Match { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
}

impl Alignment {
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|o| o.is_error()).count()
    }
}

/// Minimum edit alignment. Among equal-cost paths the backtrace prefers a
/// match, then DEL, then INS, then SUB at every step.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && d[(i - 1) * w + j - 1] == here {
            ops.push(AlignOp::Match { r: i - 1, h: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.push(AlignOp::Del { r: i - 1 });
            i -= 1;
        } else if j > 0 && d[i * w + j - 1] + 1 == here {
            ops.push(AlignOp::Ins { h: j - 1 });
            j -= 1;
        } else {
            ops.push(AlignOp::Sub { r: i - 1, h: j - 1 });
            i -= 1;
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}
