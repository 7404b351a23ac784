//! Python bindings: corpus loading and generation, the BILOU codec, span
//! scoring, and training/prediction for all four architectures.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use clinitag::checkpoint::{load_checkpoint, save_checkpoint};
use clinitag::corpus::{
    generate_synthetic, load_canonical, parse_canonical, save_canonical, Corpus, GeneratorConfig,
    Token,
};
use clinitag::metrics::{micro_identity_check, span_micro_f1};
use clinitag::model::{Model, ModelConfig};
use clinitag::numerics::ParameterStore;
use clinitag::tags::{
    decode_bilou as decode_bilou_rs, encode_bilou as encode_bilou_rs, DecodeMode, Span, TagScheme,
    TagSequence,
};
use clinitag::train::{evaluate_prepared, prepare, train_on, EvalOptions, TrainConfig};

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn io_err(err: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(err.to_string())
}

/// An annotated corpus in the canonical format.
#[pyclass(module = "clinitag_py", name = "Corpus", skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Load a canonical corpus file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<PyCorpus> {
        Ok(PyCorpus {
            inner: load_canonical(path).map_err(value_err)?,
        })
    }

    /// Parse canonical text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<PyCorpus> {
        Ok(PyCorpus {
            inner: parse_canonical(text, "<python>").map_err(value_err)?,
        })
    }

    /// Generate a synthetic corpus. `config` is the flat key=value generator
    /// format (None for defaults).
    #[staticmethod]
    #[pyo3(signature = (seed, config = None))]
    fn generate(seed: u64, config: Option<&str>) -> PyResult<PyCorpus> {
        let generator = match config {
            Some(text) => GeneratorConfig::parse(text).map_err(value_err)?,
            None => GeneratorConfig::default(),
        };
        Ok(PyCorpus {
            inner: generate_synthetic(&generator, seed).map_err(value_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        clinitag::corpus::write_canonical(&self.inner, path).map_err(io_err)
    }

    /// The normalized canonical rendering.
    fn to_text(&self) -> String {
        save_canonical(&self.inner)
    }

    #[getter]
    fn num_documents(&self) -> usize {
        self.inner.num_documents()
    }

    #[getter]
    fn num_sentences(&self) -> usize {
        self.inner.num_sentences()
    }

    /// Column names present in the corpus ("ner" plus attributes).
    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.schemes.keys().cloned().collect()
    }

    /// Sentences as (doc_id, tokens, {column: tags}) triples.
    #[allow(clippy::type_complexity)]
    fn sentences(&self) -> Vec<(String, Vec<String>, BTreeMap<String, Vec<String>>)> {
        self.inner
            .sentences()
            .map(|(doc, _, sentence)| {
                let tokens = sentence.tokens.iter().map(|t| t.text.clone()).collect();
                let columns = sentence
                    .tag_columns()
                    .iter()
                    .map(|(name, seq)| {
                        (
                            name.clone(),
                            seq.names().iter().map(|s| s.to_string()).collect(),
                        )
                    })
                    .collect();
                (doc.to_string(), tokens, columns)
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.num_sentences()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(documents={}, sentences={})",
            self.inner.num_documents(),
            self.inner.num_sentences()
        )
    }
}

/// A trained (or freshly initialized) tagger.
#[pyclass(module = "clinitag_py", name = "Model")]
struct PyModel {
    model: Model,
    store: ParameterStore,
    schemes: BTreeMap<String, Arc<TagScheme>>,
    config: ModelConfig,
}

#[pymethods]
impl PyModel {
    /// Train from a TOML config string (the `train`/`dev` path fields are
    /// ignored; the corpora are passed in). Returns (model, training_log).
    #[staticmethod]
    #[pyo3(signature = (config_toml, train, dev = None))]
    fn train(
        config_toml: &str,
        train: &PyCorpus,
        dev: Option<&PyCorpus>,
    ) -> PyResult<(PyModel, String)> {
        let config = TrainConfig::parse(config_toml).map_err(value_err)?;
        let dev_corpus = dev.map(|d| d.inner.clone()).unwrap_or_else(|| train.inner.clone());
        let outcome = train_on(&config, &train.inner, &dev_corpus).map_err(value_err)?;
        let log = outcome.log.clone();
        Ok((
            PyModel {
                config: outcome.model.config.clone(),
                model: outcome.model,
                store: outcome.store,
                schemes: outcome.schemes,
            },
            log,
        ))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyModel> {
        let checkpoint = load_checkpoint(path).map_err(value_err)?;
        let config = checkpoint.config.clone();
        let (model, store, schemes) = checkpoint.into_model().map_err(value_err)?;
        Ok(PyModel {
            model,
            store,
            schemes,
            config,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(path, &self.config, &self.schemes, &self.store).map_err(io_err)
    }

    /// Head names in decoding order (entities first).
    #[getter]
    fn heads(&self) -> Vec<String> {
        self.model
            .head_specs()
            .iter()
            .map(|s| s.name.clone())
            .collect()
    }

    /// Tag a tokenized sentence. Returns {head: (tags, [(start, end, label)])}.
    #[allow(clippy::type_complexity)]
    fn predict(
        &self,
        tokens: Vec<String>,
    ) -> PyResult<BTreeMap<String, (Vec<String>, Vec<(usize, usize, String)>)>> {
        if tokens.is_empty() {
            return Err(PyValueError::new_err("cannot tag an empty sentence"));
        }
        let mut cursor = 0usize;
        let toks: Vec<Token> = tokens
            .iter()
            .map(|t| {
                let start = cursor;
                cursor += t.chars().count().max(1) + 1;
                Token::new(t.clone(), start, start + t.chars().count().max(1))
            })
            .collect();
        let predictions = self
            .model
            .predict(&self.store, "interactive", 0, &toks)
            .map_err(value_err)?;
        Ok(predictions
            .into_iter()
            .map(|(head, p)| {
                let tags = p.tags.names().iter().map(|s| s.to_string()).collect();
                let spans = p
                    .spans
                    .into_iter()
                    .map(|s| (s.start, s.end, s.label))
                    .collect();
                (head, (tags, spans))
            })
            .collect())
    }

    /// Evaluate on a corpus. Returns {head: {metric: value}} with token
    /// accuracy and micro/macro span P/R/F1.
    fn evaluate(&self, corpus: &PyCorpus) -> PyResult<BTreeMap<String, BTreeMap<String, f64>>> {
        let prepared = prepare(&corpus.inner, &self.model).map_err(value_err)?;
        let report = evaluate_prepared(&self.model, &self.store, &prepared, EvalOptions::default())
            .map_err(value_err)?;
        Ok(report
            .heads
            .into_iter()
            .map(|(head, m)| {
                let mut metrics = BTreeMap::new();
                metrics.insert("token_accuracy".to_string(), m.token_accuracy);
                metrics.insert("span_micro_p".to_string(), m.micro.precision);
                metrics.insert("span_micro_r".to_string(), m.micro.recall);
                metrics.insert("span_micro_f1".to_string(), m.micro.f1);
                metrics.insert("span_macro_p".to_string(), m.macro_.precision);
                metrics.insert("span_macro_r".to_string(), m.macro_.recall);
                metrics.insert("span_macro_f1".to_string(), m.macro_.f1);
                (head, metrics)
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(architecture={:?}, heads={:?})",
            self.config.architecture,
            self.heads()
        )
    }
}

/// Encode (start, end, category) spans as BILOU tag names.
#[pyfunction]
#[pyo3(signature = (spans, length, categories))]
fn encode_bilou(
    spans: Vec<(usize, usize, String)>,
    length: usize,
    categories: Vec<String>,
) -> PyResult<Vec<String>> {
    let scheme = TagScheme::bilou(&categories);
    let spans: Vec<Span> = spans
        .into_iter()
        .map(|(s, e, l)| Span::new(s, e, l))
        .collect();
    let seq = encode_bilou_rs(&spans, length, &scheme).map_err(value_err)?;
    Ok(seq.names().iter().map(|s| s.to_string()).collect())
}

/// Decode BILOU tag names back to spans; `lenient` applies the fixed repair
/// for illegal sequences instead of raising.
#[pyfunction]
#[pyo3(signature = (tags, lenient = true))]
fn decode_bilou(tags: Vec<String>, lenient: bool) -> PyResult<Vec<(usize, usize, String)>> {
    // recover the category set from the tags themselves
    let mut categories: Vec<String> = tags
        .iter()
        .filter_map(|t| t.split_once('-').map(|(_, c)| c.to_string()))
        .collect();
    categories.sort();
    categories.dedup();
    let scheme = TagScheme::bilou(&categories);
    let seq = TagSequence::from_names(scheme, &tags).map_err(value_err)?;
    let mode = if lenient {
        DecodeMode::Lenient
    } else {
        DecodeMode::Strict
    };
    let spans = decode_bilou_rs(&seq, mode).map_err(value_err)?;
    Ok(spans.into_iter().map(|s| (s.start, s.end, s.label)).collect())
}

/// Exact-match span scoring: returns (precision, recall, f1).
#[pyfunction]
fn span_f1(
    gold: Vec<(usize, usize, String)>,
    pred: Vec<(usize, usize, String)>,
) -> (f64, f64, f64) {
    let gold: Vec<Span> = gold.into_iter().map(|(s, e, l)| Span::new(s, e, l)).collect();
    let pred: Vec<Span> = pred.into_iter().map(|(s, e, l)| Span::new(s, e, l)).collect();
    let (prf, _) = span_micro_f1(&gold, &pred);
    (prf.precision, prf.recall, prf.f1)
}

/// Fraction of equal positions.
#[pyfunction]
fn token_accuracy(gold: Vec<String>, pred: Vec<String>) -> PyResult<f64> {
    if gold.len() != pred.len() {
        return Err(PyValueError::new_err("sequences must have equal length"));
    }
    if gold.is_empty() {
        return Ok(1.0);
    }
    let agree = gold.iter().zip(&pred).filter(|(g, p)| g == p).count();
    Ok(agree as f64 / gold.len() as f64)
}

/// Micro-averaged score of single-label sequences; P = R = F1 by the pooled
/// FP = FN identity, and the common value is returned.
#[pyfunction]
fn micro_identity(gold: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    micro_identity_check(&gold, &pred).map_err(value_err)
}

#[pymodule]
fn clinitag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(encode_bilou, m)?)?;
    m.add_function(wrap_pyfunction!(decode_bilou, m)?)?;
    m.add_function(wrap_pyfunction!(span_f1, m)?)?;
    m.add_function(wrap_pyfunction!(token_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(micro_identity, m)?)?;
    Ok(())
}
