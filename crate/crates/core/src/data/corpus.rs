use std::collections::HashSet;
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{Lang, Phrase, Token, TokenId, Vocabulary};
use crate::error::{Result, XcbError};
use crate::numerics::Tensor;

/// Knobs for the synthetic code-switching corpus.
///
/// `world_seed` fixes the "languages" themselves (per-token acoustic
/// signatures and the entity pool); `seed` fixes which utterances are drawn.
/// Two corpora with the same `world_seed` share acoustics and entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub l1_vocab: usize,
    pub l2_vocab: usize,
    pub d_feat: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub noise_sigma: f64,
    /// L2 phrases embedded in every utterance.
    pub l2_phrase_rate: usize,
    pub seed: u64,
    pub world_seed: u64,
    pub filler_min: usize,
    pub filler_max: usize,
    pub phrase_len_min: usize,
    pub phrase_len_max: usize,
    pub n_l1_entities: usize,
    pub n_l2_entities: usize,
    /// Probability that an utterance also carries one L1 entity.
    pub l1_entity_prob: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 200,
            l1_vocab: 40,
            l2_vocab: 30,
            d_feat: 16,
            duration_min: 2,
            duration_max: 4,
            noise_sigma: 0.1,
            l2_phrase_rate: 1,
            seed: 1,
            world_seed: 7,
            filler_min: 4,
            filler_max: 8,
            phrase_len_min: 2,
            phrase_len_max: 3,
            n_l1_entities: 60,
            n_l2_entities: 60,
            l1_entity_prob: 0.5,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l1_vocab", self.l1_vocab),
            ("l2_vocab", self.l2_vocab),
            ("d_feat", self.d_feat),
            ("duration_min", self.duration_min),
            ("phrase_len_min", self.phrase_len_min),
            ("n_l1_entities", self.n_l1_entities),
            ("n_l2_entities", self.n_l2_entities),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(XcbError::Config(format!("{name} must be positive")));
        }
        if self.duration_max < self.duration_min
            || self.filler_max < self.filler_min
            || self.phrase_len_max < self.phrase_len_min
        {
            return Err(XcbError::Config("a min/max range is inverted".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(XcbError::Config("noise_sigma must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.l1_entity_prob) {
            return Err(XcbError::Config("l1_entity_prob must lie in [0, 1]".into()));
        }
        if self.l2_phrase_rate > self.n_l2_entities {
            return Err(XcbError::Config(format!(
                "l2_phrase_rate {} exceeds the {} L2 entities in the pool",
                self.l2_phrase_rate, self.n_l2_entities
            )));
        }
        if self.l2_phrase_rate > self.filler_min + 1 {
            return Err(XcbError::Config(format!(
                "{} L2 phrases cannot be kept apart by {} filler tokens",
                self.l2_phrase_rate, self.filler_min
            )));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::synthetic(self.l1_vocab, self.l2_vocab)
    }

    /// Expected share of L2 tokens among all tokens.
    pub fn expected_l2_fraction(&self) -> f64 {
        let mean = |a: usize, b: usize| (a + b) as f64 / 2.0;
        let plen = mean(self.phrase_len_min, self.phrase_len_max);
        let l2 = self.l2_phrase_rate as f64 * plen;
        let l1 = mean(self.filler_min, self.filler_max) + self.l1_entity_prob * plen;
        l2 / (l1 + l2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<Token>,
    /// `[T, d_feat]` acoustic frames.
    pub features: Tensor,
    /// Frames per token; sums to `T`.
    pub durations: Vec<usize>,
}

impl Utterance {
    pub fn token_ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn n_frames(&self) -> usize {
        self.features.shape()[0]
    }

    /// Maximal runs of L2 tokens. Generation never places two L2 phrases
    /// next to each other, so each run is exactly one annotated phrase.
    pub fn l2_spans(&self) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, t) in self.tokens.iter().enumerate() {
            match (t.lang == Lang::L2, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..self.tokens.len());
        }
        spans
    }

    pub fn l2_phrases(&self) -> Vec<Phrase> {
        self.l2_spans()
            .into_iter()
            .map(|r| Phrase {
                lang: Lang::L2,
                tokens: self.tokens[r].iter().map(|t| t.id).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub entity_pool: Vec<Phrase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> (&'static str, u64) {
        match self {
            Split::Train => ("train", 0x7472_6169_6e00_0000),
            Split::Test => ("test", 0x7465_7374_0000_0000),
        }
    }
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct World {
    vocab: Vocabulary,
    signatures: Vec<Vec<f64>>,
    l1_pool: Vec<Phrase>,
    l2_pool: Vec<Phrase>,
}

fn draw_phrases(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, ids: Range<TokenId>, lang: Lang, n: usize) -> Result<Vec<Phrase>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n + 1000 {
            return Err(XcbError::Config(format!("cannot draw {n} distinct {lang} entities")));
        }
        let len = rng.random_range(cfg.phrase_len_min..=cfg.phrase_len_max);
        let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(ids.clone())).collect();
        if seen.insert(tokens.clone()) {
            out.push(Phrase { lang, tokens });
        }
    }
    Ok(out)
}

impl World {
    fn new(cfg: &CorpusConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = cfg.vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.world_seed, 0x5151));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let signatures = (0..vocab.len())
            .map(|_| (0..cfg.d_feat).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let l2_pool = draw_phrases(&mut rng, cfg, vocab.l2_ids(), Lang::L2, cfg.n_l2_entities)?;
        let l1_pool = draw_phrases(&mut rng, cfg, vocab.l1_ids(), Lang::L1, cfg.n_l1_entities)?;
        Ok(Self {
            vocab,
            signatures,
            l1_pool,
            l2_pool,
        })
    }

    fn pool(&self) -> Vec<Phrase> {
        self.l2_pool.iter().chain(&self.l1_pool).cloned().collect()
    }

    fn utterance(&self, cfg: &CorpusConfig, split: Split, index: usize) -> Utterance {
        let (name, tag) = split.tag();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(cfg.seed, tag), index as u64));
        let n_filler = rng.random_range(cfg.filler_min..=cfg.filler_max);
        let fillers: Vec<TokenId> = (0..n_filler).map(|_| rng.random_range(self.vocab.l1_ids())).collect();

        // One slot per gap between/around fillers; L2 phrases take distinct gaps.
        let mut slots: Vec<Vec<&Phrase>> = vec![Vec::new(); n_filler + 1];
        if rng.random_bool(cfg.l1_entity_prob) {
            let p = &self.l1_pool[rng.random_range(0..self.l1_pool.len())];
            slots[rng.random_range(0..=n_filler)].push(p);
        }
        let chosen = sample(&mut rng, self.l2_pool.len(), cfg.l2_phrase_rate);
        let gaps = sample(&mut rng, n_filler + 1, cfg.l2_phrase_rate);
        for (p, g) in chosen.iter().zip(gaps.iter()) {
            slots[g].push(&self.l2_pool[p]);
        }

        let mut ids = Vec::new();
        for (g, slot) in slots.iter().enumerate() {
            for p in slot {
                ids.extend_from_slice(&p.tokens);
            }
            if g < n_filler {
                ids.push(fillers[g]);
            }
        }

        let durations: Vec<usize> = ids
            .iter()
            .map(|_| rng.random_range(cfg.duration_min..=cfg.duration_max))
            .collect();
        let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let mut frames = Vec::with_capacity(durations.iter().sum::<usize>() * cfg.d_feat);
        for (&id, &dur) in ids.iter().zip(&durations) {
            for _ in 0..dur {
                for &s in &self.signatures[id] {
                    let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    frames.push(s + n);
                }
            }
        }
        let t = durations.iter().sum();
        Utterance {
            id: format!("{name}-{index:06}"),
            tokens: self.vocab.tokens_of(&ids),
            features: Tensor::new(vec![t, cfg.d_feat], frames).expect("frame count matches durations"),
            durations,
        }
    }
}

/// Draws `n` utterances of one split. Pure function of the config.
pub fn generate_utterances(cfg: &CorpusConfig, split: Split, n: usize) -> Result<Vec<Utterance>> {
    let world = World::new(cfg)?;
    Ok((0..n).map(|i| world.utterance(cfg, split, i)).collect())
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let world = World::new(cfg)?;
    Ok(Corpus {
        train: (0..cfg.n_train).map(|i| world.utterance(cfg, Split::Train, i)).collect(),
        test: (0..cfg.n_test).map(|i| world.utterance(cfg, Split::Test, i)).collect(),
        entity_pool: world.pool(),
    })
}
