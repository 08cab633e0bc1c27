use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{mix, Utterance};
use super::vocab::Phrase;
use crate::error::{Result, XcbError};

pub const DEFAULT_HOTWORD_N: usize = 60;

/// Bias phrases offered to the recognizer for one utterance: the target L2
/// phrase plus distractors from the test-wide entity pool.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HotwordList {
    /// `None` only for lists built without a target (see [`distractor_list`]).
    pub target: Option<Phrase>,
    pub distractors: Vec<Phrase>,
}

impl HotwordList {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_phrases(mut phrases: Vec<Phrase>) -> Self {
        if phrases.is_empty() {
            return Self::empty();
        }
        let target = phrases.remove(0);
        Self {
            target: Some(target),
            distractors: phrases,
        }
    }

    pub fn len(&self) -> usize {
        usize::from(self.target.is_some()) + self.distractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Target first, then distractors in draw order.
    pub fn phrases(&self) -> Vec<&Phrase> {
        self.target.iter().chain(&self.distractors).collect()
    }
}

/// Target = the utterance's (first) L2 phrase; `n - 1` distinct distractors
/// are drawn uniformly from `pool` with the target excluded.
pub fn build_hotword_list(utt: &Utterance, pool: &[Phrase], n: usize, seed: u64) -> Result<HotwordList> {
    if n == 0 {
        return Err(XcbError::Config("hotword list size must be at least 1".into()));
    }
    let target = utt
        .l2_phrases()
        .into_iter()
        .next()
        .ok_or_else(|| XcbError::Protocol(format!("utterance {} has no L2 phrase", utt.id)))?;
    let mut candidates: Vec<&Phrase> = pool.iter().filter(|p| **p != target).collect();
    candidates.sort();
    candidates.dedup();
    if candidates.len() < n - 1 {
        return Err(XcbError::Config(format!(
            "pool offers {} distractors, list needs {}",
            candidates.len(),
            n - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x686f_7477));
    let distractors = sample(&mut rng, candidates.len(), n - 1)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    Ok(HotwordList {
        target: Some(target),
        distractors,
    })
}

/// `n` distinct pool phrases with no designated target, for utterances
/// that carry no L2 phrase (e.g. dominant-language-only pretraining data).
pub fn distractor_list(pool: &[Phrase], n: usize, seed: u64) -> Result<HotwordList> {
    let mut candidates: Vec<&Phrase> = pool.iter().collect();
    candidates.sort();
    candidates.dedup();
    if candidates.len() < n {
        return Err(XcbError::Config(format!("pool offers {} phrases, list needs {n}", candidates.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x6469_7374));
    Ok(HotwordList {
        target: None,
        distractors: sample(&mut rng, candidates.len(), n)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect(),
    })
}
