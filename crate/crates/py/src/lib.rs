//! Python bindings: corpus directories, the recognizer, training and
//! scoring.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use xcb_cli::commands::{system_name, train_into};
use xcb_cli::config::{EvalConfig, RunConfig, Variant};
use xcb_cli::pipeline::{self, CorpusDir};
use xcb_core::data::{Lang, Phrase, Token, TokenId, Utterance};
use xcb_core::metrics::{self, EvalReport};
use xcb_core::model::{load_checkpoint, save_checkpoint, InferenceMode, ModelConfig};
use xcb_core::numerics::Tensor;
use xcb_core::training::training_hotwords;
use xcb_core::XcbError;

fn to_py(e: XcbError) -> PyErr {
    match e {
        XcbError::Config(_) | XcbError::Input(_) | XcbError::Dimension(_) | XcbError::UndefinedMetric(_) => {
            PyValueError::new_err(e.to_string())
        }
        XcbError::Io(_) => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn overrides(cfg: RunConfig, pairs: Option<Vec<(String, String)>>) -> PyResult<RunConfig> {
    let pairs = pairs.unwrap_or_default();
    cfg.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).map_err(to_py)
}

fn parse_mode(mode: &str) -> PyResult<InferenceMode> {
    mode.parse().map_err(to_py)
}

/// A generated corpus directory: train/test/pretrain splits and the entity
/// pool.
#[pyclass(module = "xcb", frozen)]
struct Corpus {
    inner: CorpusDir,
}

impl Corpus {
    fn split(&self, split: &str) -> PyResult<&[Utterance]> {
        match split {
            "train" => Ok(&self.inner.train),
            "test" => Ok(&self.inner.test),
            "pretrain" => Ok(&self.inner.pretrain),
            other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        }
    }

    fn ids(&self, surfaces: &[String]) -> PyResult<Vec<Token>> {
        surfaces
            .iter()
            .map(|s| {
                self.inner
                    .vocab
                    .lookup(s)
                    .cloned()
                    .ok_or_else(|| PyValueError::new_err(format!("unknown token {s:?}")))
            })
            .collect()
    }

    fn phrase(&self, surfaces: &[String]) -> PyResult<Phrase> {
        let tokens = self.ids(surfaces)?;
        let lang = tokens.first().map(|t| t.lang).unwrap_or(Lang::Special);
        if lang == Lang::Special || tokens.iter().any(|t| t.lang != lang) {
            return Err(PyValueError::new_err("a phrase needs tokens of a single language"));
        }
        Ok(Phrase {
            lang,
            tokens: tokens.iter().map(|t| t.id).collect(),
        })
    }

    fn surfaces(&self, phrase: &Phrase) -> Vec<String> {
        phrase.tokens.iter().map(|&id| self.inner.vocab.token(id).surface.clone()).collect()
    }
}

#[pymethods]
impl Corpus {
    /// Generates a corpus into `out`. `overrides` are `(key, value)` pairs
    /// such as `("corpus.n_train", "50")`.
    #[staticmethod]
    #[pyo3(signature = (out, overrides=None))]
    fn generate(out: PathBuf, overrides: Option<Vec<(String, String)>>) -> PyResult<Self> {
        let cfg = self::overrides(RunConfig::default(), overrides)?;
        Ok(Self {
            inner: pipeline::write_corpus_dir(&cfg, &out).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::load_corpus_dir(&path).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.train.len() + self.inner.test.len()
    }

    fn n_utterances(&self, split: &str) -> PyResult<usize> {
        Ok(self.split(split)?.len())
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    /// `{"id", "tokens", "langs", "features"}` for one utterance.
    fn utterance<'py>(&self, py: Python<'py>, split: &str, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let utt = self
            .split(split)?
            .get(index)
            .ok_or_else(|| PyIndexError::new_err("utterance index out of range"))?;
        let d = PyDict::new(py);
        d.set_item("id", &utt.id)?;
        d.set_item("tokens", utt.tokens.iter().map(|t| t.surface.clone()).collect::<Vec<_>>())?;
        d.set_item("langs", utt.tokens.iter().map(|t| t.lang.to_string()).collect::<Vec<_>>())?;
        let f = &utt.features;
        d.set_item("features", (0..f.rows()).map(|r| f.row(r).to_vec()).collect::<Vec<_>>())?;
        Ok(d)
    }

    /// The hotword list evaluation uses for test utterance `index`.
    #[pyo3(signature = (index, n=60, seed=1000))]
    fn hotwords(&self, index: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<String>>> {
        let utt = self
            .inner
            .test
            .get(index)
            .ok_or_else(|| PyIndexError::new_err("utterance index out of range"))?;
        let list = training_hotwords(utt, index, &self.inner.pool, n, seed, 0).map_err(to_py)?;
        Ok(list.phrases().into_iter().map(|p| self.surfaces(p)).collect())
    }

    fn token_ids(&self, surfaces: Vec<String>) -> PyResult<Vec<TokenId>> {
        Ok(self.ids(&surfaces)?.into_iter().map(|t| t.id).collect())
    }

    fn surfaces_of(&self, ids: Vec<TokenId>) -> PyResult<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.inner
                    .vocab
                    .get(id)
                    .map(|t| t.surface.clone())
                    .ok_or_else(|| PyValueError::new_err(format!("token id {id} out of range")))
            })
            .collect()
    }

    /// Scores hypotheses against references with per-utterance hotword
    /// lists, all given as token surfaces.
    fn score<'py>(
        &self,
        py: Python<'py>,
        refs: Vec<Vec<String>>,
        hyps: Vec<Vec<String>>,
        lists: Vec<Vec<Vec<String>>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let refs = refs.iter().map(|r| self.ids(r)).collect::<PyResult<Vec<_>>>()?;
        let hyps = hyps.iter().map(|h| self.ids(h)).collect::<PyResult<Vec<_>>>()?;
        let lists = lists
            .iter()
            .map(|l| {
                l.iter()
                    .map(|p| self.phrase(p))
                    .collect::<PyResult<Vec<_>>>()
                    .map(xcb_core::data::HotwordList::from_phrases)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let report = EvalReport::compute(&refs, &hyps, &lists).map_err(to_py)?;
        json_to_py(py, &report)
    }

    /// Decodes the test split with `model` and returns the report dict.
    #[pyo3(signature = (model, mode="active", hotword_n=60, seed=1000))]
    fn evaluate<'py>(&self, py: Python<'py>, model: &Model, mode: &str, hotword_n: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let eval = EvalConfig {
            mode: parse_mode(mode)?,
            hotword_n,
            seed,
        };
        let result = pipeline::evaluate(&model.inner, &self.inner.test, &self.inner.pool, &self.inner.vocab, &eval).map_err(to_py)?;
        json_to_py(py, &result.report)
    }
}

/// The recognizer, with or without the XCB adapter and gate.
#[pyclass(module = "xcb", frozen)]
struct Model {
    inner: xcb_core::model::Model,
}

#[pymethods]
impl Model {
    /// `config` holds model fields to override, e.g. `{"d_model": 32}`.
    #[new]
    #[pyo3(signature = (config=None, seed=1))]
    fn new(config: Option<&Bound<'_, PyDict>>, seed: u64) -> PyResult<Self> {
        let mut cfg = ModelConfig::default();
        if let Some(d) = config {
            let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
            let patch: serde_json::Value = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
            let mut base = serde_json::to_value(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            for (k, v) in patch.as_object().into_iter().flatten() {
                match base.get_mut(k) {
                    Some(slot) => *slot = v.clone(),
                    None => return Err(PyValueError::new_err(format!("unknown model field {k:?}"))),
                }
            }
            cfg = serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
        }
        cfg.validate().map_err(to_py)?;
        Ok(Self {
            inner: xcb_core::model::Model::new(cfg, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = load_checkpoint(&path).map_err(to_py)?;
        Ok(Self {
            inner: xcb_core::model::Model::from_parts(c.config, c.params).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner.config, &self.inner.params, &serde_json::Value::Null).map_err(to_py)
    }

    #[getter]
    fn has_xcb(&self) -> bool {
        self.inner.has_xcb()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.params.n_scalars()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params.names().map(str::to_string).collect()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.config)
    }

    /// Decodes `[T, d_feat]` features with hotwords given as token-id
    /// phrases; returns token ids.
    #[pyo3(signature = (features, hotwords, mode="active"))]
    fn infer(&self, features: Vec<Vec<f64>>, hotwords: Vec<Vec<TokenId>>, mode: &str) -> PyResult<Vec<TokenId>> {
        let f = Tensor::from_rows(&features).map_err(to_py)?;
        let vocab = self.inner.config.vocab_size;
        let mut phrases = Vec::with_capacity(hotwords.len());
        for p in hotwords {
            if p.is_empty() || p.iter().any(|&id| id >= vocab) {
                return Err(PyValueError::new_err("hotword phrases must be non-empty and use in-vocabulary ids"));
            }
            phrases.push(Phrase { lang: Lang::L2, tokens: p });
        }
        let list = xcb_core::data::HotwordList::from_phrases(phrases);
        self.inner.infer(&f, &list, parse_mode(mode)?).map_err(to_py)
    }

    fn system_name(&self, mode: &str) -> PyResult<&'static str> {
        Ok(system_name(&self.inner, parse_mode(mode)?))
    }
}

/// Pretrains a backbone (or loads `init`), fine-tunes `variant` on the corpus
/// at `corpus_dir` and writes the run into `out`.
#[pyfunction]
#[pyo3(signature = (corpus_dir, out, variant="xcb", overrides=None, init=None))]
fn train(
    corpus_dir: PathBuf,
    out: PathBuf,
    variant: &str,
    overrides: Option<Vec<(String, String)>>,
    init: Option<PathBuf>,
) -> PyResult<Model> {
    let corpus = pipeline::load_corpus_dir(&corpus_dir).map_err(to_py)?;
    let variant: Variant = variant.parse().map_err(to_py)?;
    let mut cfg = RunConfig {
        corpus: corpus.config.clone(),
        ..RunConfig::default()
    };
    cfg.variant = variant;
    let cfg = self::overrides(cfg, overrides)?;
    if cfg.corpus != corpus.config {
        return Err(PyValueError::new_err("corpus settings come from the corpus directory"));
    }
    let model = train_into(&cfg, &corpus, init.as_deref(), &out, false).map_err(to_py)?;
    Ok(Model { inner: model })
}

/// Count-weighted mean of the biased character and word error rates.
#[pyfunction]
fn bmer(bcer: f64, n_bc: usize, bwer: f64, n_bw: usize) -> PyResult<f64> {
    metrics::bmer(bcer, n_bc, bwer, n_bw).map_err(to_py)
}

/// Replaces every L1 token of a `(surface, lang)` sequence with `<unk>`.
#[pyfunction]
fn mask_l1(tokens: Vec<(String, String)>) -> PyResult<Vec<(String, String)>> {
    let parsed = tokens
        .into_iter()
        .map(|(surface, lang)| {
            let lang = match lang.as_str() {
                "L1" => Lang::L1,
                "L2" => Lang::L2,
                "SPECIAL" => Lang::Special,
                other => return Err(PyValueError::new_err(format!("unknown language tag {other:?}"))),
            };
            Ok(Token { id: 0, surface, lang })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(xcb_core::data::mask_l1(&parsed)
        .into_iter()
        .map(|t| (t.surface, t.lang.to_string()))
        .collect())
}

#[pymodule]
fn xcb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(bmer, m)?)?;
    m.add_function(wrap_pyfunction!(mask_l1, m)?)?;
    Ok(())
}
