use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub type TokenId = usize;

/// Language tag of a token. `L1` is the dominant language (scored per
/// character), `L2` the embedded one (scored per word).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    L1,
    L2,
    #[serde(rename = "SPECIAL")]
    Special,
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lang::L1 => "L1",
            Lang::L2 => "L2",
            Lang::Special => "SPECIAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
    pub lang: Lang,
}

/// Contiguous token sequence used as an entity / hotword.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phrase {
    pub lang: Lang,
    pub tokens: Vec<TokenId>,
}

const SYLLABLES: [&str; 10] = ["ka", "lo", "mi", "ne", "tu", "sa", "ri", "po", "de", "fu"];

/// Token inventory: three specials, then the L1 block, then the L2 block.
/// The two language blocks are disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    by_surface: HashMap<String, TokenId>,
    n_l1: usize,
    n_l2: usize,
}

impl Vocabulary {
    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    /// Class predicted by the biasing head outside hotword spans.
    pub const NO_BIAS: TokenId = 2;
    pub const N_SPECIAL: usize = 3;

    pub fn synthetic(n_l1: usize, n_l2: usize) -> Self {
        let mut tokens: Vec<Token> = ["<pad>", "<unk>", "<nobias>"]
            .iter()
            .enumerate()
            .map(|(id, s)| Token {
                id,
                surface: s.to_string(),
                lang: Lang::Special,
            })
            .collect();
        for i in 0..n_l1 {
            // CJK unified ideographs stand in for Mandarin characters.
            let c = char::from_u32(0x4E00 + i as u32).expect("valid CJK code point");
            tokens.push(Token {
                id: tokens.len(),
                surface: c.to_string(),
                lang: Lang::L1,
            });
        }
        for i in 0..n_l2 {
            let mut w = format!("{}{}", SYLLABLES[(i / 10) % 10], SYLLABLES[i % 10]);
            if i >= 100 {
                w.push_str(&(i / 100).to_string());
            }
            tokens.push(Token {
                id: tokens.len(),
                surface: w,
                lang: Lang::L2,
            });
        }
        let by_surface = tokens.iter().map(|t| (t.surface.clone(), t.id)).collect();
        Self {
            tokens,
            by_surface,
            n_l1,
            n_l2,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_l1(&self) -> usize {
        self.n_l1
    }

    pub fn n_l2(&self) -> usize {
        self.n_l2
    }

    pub fn token(&self, id: TokenId) -> &Token {
        &self.tokens[id]
    }

    pub fn get(&self, id: TokenId) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn lang(&self, id: TokenId) -> Lang {
        self.tokens[id].lang
    }

    pub fn lookup(&self, surface: &str) -> Option<&Token> {
        self.by_surface.get(surface).map(|&id| &self.tokens[id])
    }

    pub fn l1_ids(&self) -> std::ops::Range<TokenId> {
        Self::N_SPECIAL..Self::N_SPECIAL + self.n_l1
    }

    pub fn l2_ids(&self) -> std::ops::Range<TokenId> {
        Self::N_SPECIAL + self.n_l1..Self::N_SPECIAL + self.n_l1 + self.n_l2
    }

    pub fn tokens_of(&self, ids: &[TokenId]) -> Vec<Token> {
        ids.iter().map(|&id| self.tokens[id].clone()).collect()
    }

    pub fn unk(&self) -> Token {
        self.tokens[Self::UNK].clone()
    }
}

/// Replaces every L1 token with `<unk>`; L2 and special tokens pass through.
pub fn mask_l1(labels: &[Token]) -> Vec<Token> {
    labels
        .iter()
        .map(|t| match t.lang {
            Lang::L1 => Token {
                id: Vocabulary::UNK,
                surface: "<unk>".to_string(),
                lang: Lang::Special,
            },
            Lang::L2 | Lang::Special => t.clone(),
        })
        .collect()
}
