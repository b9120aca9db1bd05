//! Python bindings for the `elemid` crate.

use std::path::PathBuf;

use ::elemid::analytics;
use ::elemid::annotation::{self, Outcome};
use ::elemid::cli::RunConfig;
use ::elemid::corpus::{self as core_corpus, segment_paragraph, split_corpus};
use ::elemid::model::{load_checkpoint, save_checkpoint, Checkpoint, SavedModel};
use ::elemid::synthgen::{generate_context_task, generate_corpus_seeded, ContextTaskConfig, GeneratorConfig};
use ::elemid::training::{evaluate_stage, train_pipeline, Stage, Tagger};
use ::elemid::{Clause, ElementLabel, Paragraph};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

/// `(paragraph_id, [(text, label_or_None), ...])`
type ParagraphRecord = (String, Vec<(String, Option<String>)>);

fn err(e: ::elemid::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn label(s: &str) -> PyResult<ElementLabel> {
    s.parse().map_err(err)
}

fn stage(s: &str) -> PyResult<Stage> {
    match s {
        "refined" => Ok(Stage::Refined),
        "first" => Ok(Stage::First),
        other => Err(PyValueError::new_err(format!("unknown stage {other:?}"))),
    }
}

/// Serialize through JSON into plain Python objects.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A labelled or unlabelled collection of paragraphs.
#[pyclass(module = "elemid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Corpus {
    inner: ::elemid::Corpus,
}

#[pymethods]
impl Corpus {
    /// Build from `[(paragraph_id, [(text, label_or_None), ...]), ...]`.
    #[new]
    fn new(paragraphs: Vec<ParagraphRecord>) -> PyResult<Self> {
        let ps = paragraphs
            .into_iter()
            .map(|(id, clauses)| {
                let clauses = clauses
                    .into_iter()
                    .map(|(text, gold)| Ok(Clause::new(text, gold.as_deref().map(label).transpose()?)))
                    .collect::<PyResult<_>>()?;
                Paragraph::new(id, clauses).map_err(err)
            })
            .collect::<PyResult<_>>()?;
        Ok(Corpus {
            inner: ::elemid::Corpus::new(ps).map_err(err)?,
        })
    }

    /// Segment raw paragraphs (one string each) into clauses.
    #[staticmethod]
    fn from_texts(texts: Vec<String>) -> PyResult<Self> {
        let ps = texts
            .iter()
            .enumerate()
            .filter_map(|(i, t)| Paragraph::from_text(format!("p{i:06}"), t))
            .collect();
        Ok(Corpus {
            inner: ::elemid::Corpus::new(ps).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            inner: core_corpus::read_corpus(path).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        core_corpus::write_corpus(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn num_clauses(&self) -> usize {
        self.inner.num_clauses()
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary().tokens().to_vec()
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        self.inner.vocabulary().tokenize(text)
    }

    /// `[(paragraph_id, [(text, label_or_None), ...]), ...]`
    fn paragraphs(&self) -> Vec<ParagraphRecord> {
        self.inner
            .paragraphs()
            .iter()
            .map(|p| {
                let clauses = p
                    .clauses()
                    .iter()
                    .map(|c| (c.text.clone(), c.gold.map(|g| g.as_str().to_string())))
                    .collect();
                (p.id().to_string(), clauses)
            })
            .collect()
    }

    /// Train/validation/test corpora.
    #[pyo3(signature = (ratios = (8, 1, 1), seed = 0))]
    fn split(&self, ratios: (u32, u32, u32), seed: u64) -> PyResult<(Corpus, Corpus, Corpus)> {
        let s = split_corpus(&self.inner, ratios, seed).map_err(err)?;
        Ok((Corpus { inner: s.train }, Corpus { inner: s.valid }, Corpus { inner: s.test }))
    }

    /// Categorical, positional and ordinal statistics as a dict.
    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analytics::analyze(&self.inner).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Corpus(paragraphs={}, clauses={})", self.inner.len(), self.inner.num_clauses())
    }
}

/// A trained model with its vocabulary.
#[pyclass(module = "elemid", frozen)]
struct Model {
    inner: Checkpoint,
}

impl Model {
    fn prepare(&self, corpus: &Corpus) -> ::elemid::Corpus {
        corpus.inner.retokenized(&self.inner.vocabulary)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: load_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(err)
    }

    /// `"hierarchical"` or `"clause"`.
    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.model {
            SavedModel::Hierarchical(_) => "hierarchical",
            SavedModel::Clause(_) => "clause",
        }
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.model.config())
    }

    /// Per-paragraph lists of 7-way label distributions.
    #[pyo3(signature = (corpus, stage = "refined"))]
    fn probabilities(&self, corpus: &Corpus, stage: &str) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let stage = self::stage(stage)?;
        let corpus = self.prepare(corpus);
        corpus
            .paragraphs()
            .iter()
            .map(|p| self.inner.model.paragraph_probs(p, stage).map_err(err))
            .collect()
    }

    /// Per-paragraph lists of predicted labels.
    #[pyo3(signature = (corpus, stage = "refined"))]
    fn predict(&self, corpus: &Corpus, stage: &str) -> PyResult<Vec<Vec<String>>> {
        let stage = self::stage(stage)?;
        let corpus = self.prepare(corpus);
        corpus
            .paragraphs()
            .iter()
            .map(|p| {
                let labels = self.inner.model.predict(p, stage).map_err(err)?;
                Ok(labels.iter().map(|l| l.as_str().to_string()).collect())
            })
            .collect()
    }

    /// Evaluation report of a labelled corpus as a dict.
    #[pyo3(signature = (corpus, stage = "refined"))]
    fn evaluate<'py>(&self, py: Python<'py>, corpus: &Corpus, stage: &str) -> PyResult<Bound<'py, PyAny>> {
        let report = evaluate_stage(&self.inner.model, &self.prepare(corpus), self::stage(stage)?).map_err(err)?;
        to_py(py, &report)
    }
}

/// Split raw text into clauses.
#[pyfunction]
fn segment(text: &str) -> Vec<String> {
    segment_paragraph(text)
}

/// Cohen's kappa over paired label strings.
#[pyfunction]
fn cohen_kappa(pairs: Vec<(String, String)>) -> PyResult<f64> {
    let pairs = pairs
        .iter()
        .map(|(a, b)| Ok((label(a)?, label(b)?)))
        .collect::<PyResult<Vec<_>>>()?;
    annotation::cohen_kappa(&pairs).map_err(err)
}

/// Majority-rule label, or None when the clause is discarded.
#[pyfunction]
#[pyo3(signature = (a, b, third = None))]
fn adjudicate(a: &str, b: &str, third: Option<&str>) -> PyResult<Option<String>> {
    let result = annotation::adjudicate(label(a)?, label(b)?, third.map(label).transpose()?).map_err(err)?;
    Ok(match result.outcome {
        Outcome::Agreed(l) | Outcome::Resolved(l) => Some(l.as_str().to_string()),
        Outcome::Discarded => None,
    })
}

/// Synthetic corpus. `task` is `"calibrated"` or `"context"`.
#[pyfunction]
#[pyo3(signature = (paragraphs, seed = 0, task = "calibrated"))]
fn generate(paragraphs: usize, seed: u64, task: &str) -> PyResult<Corpus> {
    let inner = match task {
        "calibrated" => generate_corpus_seeded(
            &GeneratorConfig {
                seed,
                ..GeneratorConfig::calibrated()
            },
            paragraphs,
        ),
        "context" => generate_context_task(
            &ContextTaskConfig {
                seed,
                ..ContextTaskConfig::default()
            },
            paragraphs,
        ),
        other => return Err(PyValueError::new_err(format!("unknown task {other:?}"))),
    }
    .map_err(err)?;
    Ok(Corpus { inner })
}

/// Two-phase training. `config` is a JSON string in the CLI `--config`
/// format; the seed argument overrides the one it contains.
#[pyfunction]
#[pyo3(signature = (train, valid, config = None, seed = 0))]
fn train(py: Python<'_>, train: &Corpus, valid: &Corpus, config: Option<&str>, seed: u64) -> PyResult<Model> {
    let mut run: RunConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    run.train.seed = seed;
    let vocabulary = train.inner.vocabulary().clone();
    run.model.vocab_size = vocabulary.len();
    let split = core_corpus::CorpusSplit {
        train: train.inner.clone(),
        valid: valid.inner.retokenized(&vocabulary),
        test: ::elemid::Corpus::new(Vec::new()).map_err(err)?,
    };
    let (_, outcome) = py.detach(|| train_pipeline(&run.model, &run.train, &split)).map_err(err)?;
    Ok(Model {
        inner: Checkpoint {
            model: SavedModel::Hierarchical(outcome.params),
            vocabulary,
        },
    })
}

#[pymodule]
fn elemid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(adjudicate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("LABELS", ElementLabel::ALL.iter().map(|l| l.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
