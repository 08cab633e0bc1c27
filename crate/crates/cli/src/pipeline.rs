//! Corpus directories, pretraining, fine-tuning and evaluation shared by the
//! subcommands and the acceptance suite.

use std::fs;
use std::path::Path;

use xcb_core::data::{
    generate_corpus, generate_utterances, read_corpus_file, read_entity_pool_file, write_corpus_file,
    write_entity_pool_file, CorpusConfig, Phrase, Split, Token, Utterance, Vocabulary,
};
use xcb_core::metrics::EvalReport;
use xcb_core::model::{InferenceMode, Model, ModelConfig, ModelParams};
use xcb_core::training::{train, training_hotwords, EpochReport, TrainConfig};
use xcb_core::{Result, XcbError};

use crate::config::{EvalConfig, RunConfig, Variant};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const PRETRAIN_FILE: &str = "pretrain.jsonl";
pub const POOL_FILE: &str = "entities.txt";
pub const CONFIG_FILE: &str = "config.txt";

const PRETRAIN_SEED_TAG: u64 = 0x7072_6574_7261_696e;
const FINETUNE_INIT_TAG: u64 = 0x7863_625f_696e_6974;

/// Dominant-language-only split drawn from the same world as the corpus.
pub fn pretrain_corpus_config(corpus: &CorpusConfig, n: usize) -> CorpusConfig {
    CorpusConfig {
        n_train: n,
        n_test: 0,
        l2_phrase_rate: 0,
        seed: corpus.seed ^ PRETRAIN_SEED_TAG,
        ..corpus.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDir {
    pub config: CorpusConfig,
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub pretrain: Vec<Utterance>,
    pub pool: Vec<Phrase>,
}

/// Generates every split of `cfg.corpus` and writes it under `dir` along
/// with the resolved config.
pub fn write_corpus_dir(cfg: &RunConfig, dir: &Path) -> Result<CorpusDir> {
    cfg.corpus.validate()?;
    let corpus = generate_corpus(&cfg.corpus)?;
    let pre_cfg = pretrain_corpus_config(&cfg.corpus, cfg.pretrain.n_utterances);
    let pretrain = generate_utterances(&pre_cfg, Split::Train, pre_cfg.n_train)?;
    let vocab = cfg.corpus.vocabulary();
    fs::create_dir_all(dir)?;
    write_corpus_file(&dir.join(TRAIN_FILE), &corpus.train)?;
    write_corpus_file(&dir.join(TEST_FILE), &corpus.test)?;
    write_corpus_file(&dir.join(PRETRAIN_FILE), &pretrain)?;
    write_entity_pool_file(&dir.join(POOL_FILE), &corpus.entity_pool, &vocab)?;
    fs::write(dir.join(CONFIG_FILE), cfg.render())?;
    log::info!(
        "wrote {} train, {} test, {} pretrain utterances to {}",
        corpus.train.len(),
        corpus.test.len(),
        pretrain.len(),
        dir.display()
    );
    Ok(CorpusDir {
        config: cfg.corpus.clone(),
        vocab,
        train: corpus.train,
        test: corpus.test,
        pretrain,
        pool: corpus.entity_pool,
    })
}

/// Reads a directory written by [`write_corpus_dir`]. The corpus section of
/// its `config.txt` defines the vocabulary.
pub fn load_corpus_dir(dir: &Path) -> Result<CorpusDir> {
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?.corpus;
    let vocab = config.vocabulary();
    Ok(CorpusDir {
        train: read_corpus_file(&dir.join(TRAIN_FILE), &vocab)?,
        test: read_corpus_file(&dir.join(TEST_FILE), &vocab)?,
        pretrain: read_corpus_file(&dir.join(PRETRAIN_FILE), &vocab)?,
        pool: read_entity_pool_file(&dir.join(POOL_FILE), &vocab)?,
        config,
        vocab,
    })
}

/// Trains the baseline architecture on the dominant-language split. With
/// zero pretraining epochs this is just the seeded random init.
pub fn pretrain_backbone(cfg: &RunConfig, corpus: &CorpusDir) -> Result<(Model, Vec<EpochReport>)> {
    let mut model = Model::new(cfg.for_variant(Variant::Baseline).model, cfg.train.seed)?;
    if cfg.pretrain.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let train_cfg = TrainConfig {
        lr: cfg.pretrain.lr,
        epochs: cfg.pretrain.epochs,
        alpha: 0.0,
        freeze_backbone: false,
        ..cfg.train.clone()
    };
    let curve = train(&mut model, &corpus.pretrain, &corpus.pool, &train_cfg, &mut |r| {
        log::info!("pretrain epoch {} l_total {:.5}", r.epoch, r.l_total);
        Ok(())
    })?;
    Ok((model, curve))
}

/// Builds the `variant` architecture on top of `backbone`: shared tensors are
/// copied, adapter and gate tensors start from their seeded init.
pub fn attach_backbone(model_cfg: &ModelConfig, backbone: &ModelParams, seed: u64) -> Result<Model> {
    let mut params = ModelParams::init(model_cfg, seed ^ FINETUNE_INIT_TAG)?;
    for (name, t) in backbone.iter() {
        if ModelParams::is_xcb_name(name) {
            continue;
        }
        if params.get(name).is_none_or(|cur| cur.shape() != t.shape()) {
            return Err(XcbError::Config(format!("backbone tensor {name} does not fit the model config")));
        }
        params.insert(name, t.clone());
    }
    Model::from_parts(model_cfg.clone(), params)
}

pub fn finetune(
    cfg: &RunConfig,
    variant: Variant,
    backbone: &ModelParams,
    corpus: &CorpusDir,
    sink: &mut dyn FnMut(&EpochReport) -> Result<()>,
) -> Result<(Model, Vec<EpochReport>)> {
    let resolved = cfg.for_variant(variant);
    let mut model = attach_backbone(&resolved.model, backbone, resolved.train.seed)?;
    let curve = train(&mut model, &corpus.train, &corpus.pool, &resolved.train, sink)?;
    Ok((model, curve))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub hypotheses: Vec<Vec<Token>>,
}

/// Decodes every utterance with its hotword list and scores the corpus.
pub fn evaluate(model: &Model, utts: &[Utterance], pool: &[Phrase], vocab: &Vocabulary, eval: &EvalConfig) -> Result<Evaluation> {
    evaluate_mode(model, utts, pool, vocab, eval, eval.mode)
}

pub fn evaluate_mode(
    model: &Model,
    utts: &[Utterance],
    pool: &[Phrase],
    vocab: &Vocabulary,
    eval: &EvalConfig,
    mode: InferenceMode,
) -> Result<Evaluation> {
    model.config.check_vocabulary(vocab)?;
    let mut refs = Vec::with_capacity(utts.len());
    let mut hyps = Vec::with_capacity(utts.len());
    let mut lists = Vec::with_capacity(utts.len());
    for (i, utt) in utts.iter().enumerate() {
        // Epoch 0 is never a training epoch, so an eval seed equal to the
        // training seed still draws fresh lists.
        let list = training_hotwords(utt, i, pool, eval.hotword_n, eval.seed, 0)?;
        let ids = model.infer(&utt.features, &list, mode)?;
        refs.push(utt.tokens.clone());
        hyps.push(vocab.tokens_of(&ids));
        lists.push(list);
    }
    Ok(Evaluation {
        report: EvalReport::compute(&refs, &hyps, &lists)?,
        hypotheses: hyps,
    })
}
