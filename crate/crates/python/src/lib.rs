//! Python bindings: `import d2t`.

use std::collections::HashMap;
use std::path::PathBuf;

use d2t_core::ingest::{self, generate_synthetic, sniff_line, to_json_line, SyntheticSpec, SyntheticWorld};
use d2t_core::linearize::{linearize as lin, LinearizationConfig};
use d2t_core::metrics::{self, evaluate_subsets, MetricSet};
use d2t_core::seq2seq::{self, beam_decode, greedy_decode_batch, ModelConfig, SizeTag, SpanMaskSpec};
use d2t_core::tokenizer;
use d2t_core::train::{self, DevSet, ModelCheckpoint, Start, TrainConfig, TrainMode};
use d2t_core::{Error, Example};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) | Error::Diverged { .. } | Error::SentinelExhaustion(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for d2t_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Parses JSONL records of any supported format; every line must be valid.
fn examples(lines: &[String]) -> PyResult<Vec<Example>> {
    let Some(first) = lines.iter().find(|l| !l.trim().is_empty()) else {
        return Err(PyValueError::new_err("no records"));
    };
    let format = sniff_line(first).py()?;
    let (exs, report) = ingest::parse_lines(format, lines.iter().map(String::as_str));
    if let Some((line, msg)) = report.violations.first() {
        return Err(PyValueError::new_err(format!("line {line}: {msg}")));
    }
    Ok(exs)
}

fn lin_config(task_prefix: bool, lowercase: bool) -> LinearizationConfig {
    LinearizationConfig { include_task_prefix: task_prefix, lowercase }
}

/// BPE vocabulary.
#[pyclass(name = "Vocab", module = "d2t")]
struct PyVocab {
    inner: tokenizer::Vocab,
}

#[pymethods]
impl PyVocab {
    #[staticmethod]
    fn train(corpus: Vec<String>, size: usize) -> PyResult<Self> {
        Ok(Self { inner: tokenizer::train_bpe(&corpus, size).py()? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: tokenizer::Vocab::load(&path).py()? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: tokenizer::Vocab::from_json(text).py()? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner.decode(&ids).py()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A trained or pretrained model checkpoint.
#[pyclass(name = "Model", module = "d2t")]
struct PyModel {
    inner: ModelCheckpoint,
}

fn size_tag(size: &str) -> PyResult<SizeTag> {
    size.parse().py()
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: train::load_checkpoint(&path).py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        train::save_checkpoint(&self.inner, &path).py()
    }

    /// Span-corruption pretraining on plain-text documents.
    #[staticmethod]
    #[pyo3(signature = (texts, vocab, seed, size = "tiny", max_len = seq2seq::DEFAULT_MAX_LEN, max_steps = 1000, batch_size = 16, lr = train::DEFAULT_LEARNING_RATE))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain(
        texts: Vec<String>,
        vocab: &PyVocab,
        seed: u64,
        size: &str,
        max_len: usize,
        max_steps: usize,
        batch_size: usize,
        lr: f64,
    ) -> PyResult<Self> {
        let docs: Vec<Vec<u32>> = texts.iter().map(|t| vocab.inner.encode(t)).collect();
        let cfg = ModelConfig::for_size(size_tag(size)?, vocab.inner.len(), max_len);
        let tcfg = TrainConfig { max_steps, batch_size, learning_rate: lr, ..TrainConfig::new(TrainMode::Pretrain, seed) };
        let out = train::pretrain(&docs, &cfg, &tcfg, &SpanMaskSpec::default(), Some(&vocab.inner.hash()), "python").py()?;
        Ok(Self { inner: out.checkpoint })
    }

    /// Fine-tunes on JSONL records and returns the best-dev-BLEU snapshot.
    #[staticmethod]
    #[pyo3(signature = (train_lines, dev_lines, vocab, seed, init = None, size = "tiny", max_len = seq2seq::DEFAULT_MAX_LEN, max_steps = 1000, eval_every = train::DEFAULT_EVAL_EVERY, batch_size = 16, lr = train::DEFAULT_LEARNING_RATE, dev_max_len = None))]
    #[allow(clippy::too_many_arguments)]
    fn finetune(
        train_lines: Vec<String>,
        dev_lines: Vec<String>,
        vocab: &PyVocab,
        seed: u64,
        init: Option<&PyModel>,
        size: &str,
        max_len: usize,
        max_steps: usize,
        eval_every: usize,
        batch_size: usize,
        lr: f64,
        dev_max_len: Option<usize>,
    ) -> PyResult<Self> {
        let lin = LinearizationConfig::default();
        let pairs = train::training_pairs(&examples(&train_lines)?, &lin, &vocab.inner);
        let dev = DevSet::from_examples(&examples(&dev_lines)?, &lin, &vocab.inner);
        let tcfg = TrainConfig {
            max_steps,
            eval_every,
            batch_size,
            learning_rate: lr,
            dev_max_len,
            ..TrainConfig::new(TrainMode::Finetune, seed)
        };
        let start = match init {
            Some(m) => Start::Checkpoint(&m.inner),
            None => Start::Fresh(ModelConfig::for_size(size_tag(size)?, vocab.inner.len(), max_len)),
        };
        let out = train::finetune(start, &pairs, &dev, &vocab.inner, &tcfg, "python").py()?;
        Ok(Self { inner: out.best().clone() })
    }

    /// Decodes JSONL records; greedy when `beam` is 1.
    #[pyo3(signature = (vocab, lines, beam = 1, max_len = None))]
    fn predict(&self, vocab: &PyVocab, lines: Vec<String>, beam: usize, max_len: Option<usize>) -> PyResult<Vec<String>> {
        if beam == 0 {
            return Err(PyValueError::new_err("beam must be at least 1"));
        }
        let (p, cfg) = (&self.inner.params, &self.inner.cfg);
        let max_len = max_len.unwrap_or(cfg.max_len).min(cfg.max_len);
        let lin = LinearizationConfig::default();
        let sources: Vec<Vec<u32>> = examples(&lines)?.iter().map(|e| vocab.inner.encode(&lin_text(e, &lin))).collect();
        if let Some(s) = sources.iter().find(|s| s.is_empty() || s.len() > cfg.max_len) {
            return Err(PyValueError::new_err(format!("source of {} tokens outside 1..={}", s.len(), cfg.max_len)));
        }
        let outs = if beam == 1 {
            greedy_decode_batch(p, cfg, &sources, max_len)
        } else {
            sources.iter().map(|s| beam_decode(p, cfg, s, beam, max_len)).collect()
        };
        outs.iter().map(|ids| vocab.inner.decode(ids).py()).collect()
    }

    #[getter]
    fn step(&self) -> usize {
        self.inner.step
    }

    #[getter]
    fn dev_bleu(&self) -> Option<f64> {
        self.inner.dev_bleu
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.cfg.num_params()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }
}

fn lin_text(e: &Example, cfg: &LinearizationConfig) -> String {
    lin(&e.input, cfg)
}

/// Validates JSONL lines of one format; returns canonical lines and the report.
#[pyfunction]
fn parse<'py>(py: Python<'py>, format: &str, lines: Vec<String>) -> PyResult<(Vec<String>, Bound<'py, PyAny>)> {
    let format: ingest::Format = format.parse().py()?;
    let (exs, report) = ingest::parse_lines(format, lines.iter().map(String::as_str));
    let report = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((exs.iter().map(to_json_line).collect(), json_to_py(py, &report)?))
}

#[pyfunction]
#[pyo3(signature = (line, task_prefix = true, lowercase = false))]
fn linearize(line: String, task_prefix: bool, lowercase: bool) -> PyResult<String> {
    let ex = examples(&[line])?;
    Ok(lin_text(&ex[0], &lin_config(task_prefix, lowercase)))
}

fn spec(seed: u64, n_train: usize, n_dev: usize, n_test: usize, holdout_relations: usize) -> SyntheticSpec {
    SyntheticSpec { seed, n_train, n_dev, n_test, holdout_relations, ..SyntheticSpec::default() }
}

/// Synthetic triple-to-text splits as JSONL lines keyed by split name.
#[pyfunction]
#[pyo3(signature = (seed, n_train = 1000, n_dev = 100, n_test = 100, holdout_relations = 2))]
fn synth(seed: u64, n_train: usize, n_dev: usize, n_test: usize, holdout_relations: usize) -> PyResult<HashMap<String, Vec<String>>> {
    let ds = generate_synthetic(&spec(seed, n_train, n_dev, n_test, holdout_relations)).py()?;
    let lines = |xs: &[Example]| xs.iter().map(to_json_line).collect::<Vec<_>>();
    Ok(HashMap::from([
        ("train".to_string(), lines(&ds.train)),
        ("dev".to_string(), lines(&ds.dev)),
        ("test".to_string(), lines(&ds.test)),
    ]))
}

/// Unlabelled documents over the same world as `synth(seed, ...)`.
#[pyfunction]
#[pyo3(signature = (seed, n_docs, holdout_relations = 2))]
fn synth_text(seed: u64, n_docs: usize, holdout_relations: usize) -> PyResult<Vec<String>> {
    let world = SyntheticWorld::new(&spec(seed, 1, 1, 1, holdout_relations)).py()?;
    Ok(world.text_corpus(n_docs, seed))
}

#[pyfunction]
fn corpus_bleu(hyps: Vec<String>, refs: Vec<Vec<String>>) -> PyResult<f64> {
    Ok(metrics::corpus_bleu(&hyps, &refs).py()?.score)
}

#[pyfunction]
fn meteor_lite(hyps: Vec<String>, refs: Vec<Vec<String>>) -> PyResult<f64> {
    metrics::meteor_lite(&hyps, &refs).py()
}

/// Scores hypotheses against JSONL records, overall and per subset.
#[pyfunction]
#[pyo3(signature = (lines, hyps, metrics = "bleu"))]
fn evaluate<'py>(py: Python<'py>, lines: Vec<String>, hyps: Vec<String>, metrics: &str) -> PyResult<Bound<'py, PyAny>> {
    let which: MetricSet = metrics.parse().py()?;
    let report = evaluate_subsets(&examples(&lines)?, &hyps, which).py()?;
    let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

#[pyfunction]
#[pyo3(signature = (ids, seed, corruption_rate = 0.15, mean_span_length = 3.0))]
fn span_corrupt(ids: Vec<u32>, seed: u64, corruption_rate: f64, mean_span_length: f64) -> PyResult<(Vec<u32>, Vec<u32>)> {
    seq2seq::span_corrupt(&ids, &SpanMaskSpec { corruption_rate, mean_span_length }, seed).py()
}

#[pyfunction]
fn splice(input: Vec<u32>, target: Vec<u32>) -> PyResult<Vec<u32>> {
    seq2seq::splice(&input, &target).py()
}

#[pymodule]
fn d2t(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocab>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(synth_text, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(meteor_lite, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(span_corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(splice, m)?)?;
    Ok(())
}
