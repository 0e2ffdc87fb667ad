//! Python bindings for the `bidirlm` crate.
//!
//! Exposes the tokenizer, the objective transformation and attention
//! predicate, a trainable model in 32-bit precision, the evaluation
//! protocols and the synthetic infill language.

use bidirlm::data::{Document, SpecialTokens, TokenizerModel};
use bidirlm::eval::{self, EvalConfig, InfillItem};
use bidirlm::model::{CheckpointMeta, ModelConfig, Params};
use bidirlm::objective::{self, AttentionSpec, TargetKind, TransformPlan, Variant};
use bidirlm::trainer::{flops_estimate, TrainConfig, Trainer};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: bidirlm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(PyValueError::new_err)
}

/// Byte-level BPE tokenizer.
#[pyclass(name = "Tokenizer", module = "pybidirlm")]
struct PyTokenizer {
    inner: TokenizerModel,
}

#[pymethods]
impl PyTokenizer {
    #[staticmethod]
    fn train(texts: Vec<String>, vocab_size: usize) -> PyResult<Self> {
        let inner = TokenizerModel::train(texts.iter().map(|t| t.as_bytes()), vocab_size).map_err(err)?;
        Ok(PyTokenizer { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTokenizer { inner: TokenizerModel::load(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.inner.decode(&ids).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    /// `(mask, eos, pad)` ids.
    #[getter]
    fn specials(&self) -> (u32, u32, u32) {
        let s = self.inner.specials();
        (s.mask, s.eos, s.pad)
    }
}

/// Names of the six objective variants.
#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.name()).collect()
}

/// Draw `(mask_positions, n_bidir, n_predict)` for a document of `n` tokens.
#[pyfunction]
fn sample_plan(variant: &str, n: usize, seed: u64) -> PyResult<(Vec<usize>, usize, usize)> {
    let spec = parse_variant(variant)?.spec();
    let mut rng = bidirlm::seed::substream(seed, "masks");
    let p = objective::sample_plan(&spec, n, &mut rng).map_err(err)?;
    Ok((p.mask_positions, p.n_bidir, p.n_predict))
}

/// Apply the mask-and-move transformation. Returns a dict with `inputs`,
/// `positions` and `targets` (each target `None` or `(token, "next"|"mask")`).
#[pyfunction]
fn transform<'py>(
    py: Python<'py>,
    tokens: Vec<u32>,
    mask_positions: Vec<usize>,
    n_bidir: usize,
    n_predict: usize,
    mask_id: u32,
) -> PyResult<Bound<'py, PyDict>> {
    let eos = *tokens.last().ok_or_else(|| PyValueError::new_err("empty document"))?;
    let doc = Document::new(tokens, eos, "py").map_err(err)?;
    let plan = TransformPlan::new(doc.len(), mask_positions, n_bidir, n_predict).map_err(err)?;
    let ex = objective::transform(&doc, &plan, mask_id).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("inputs", ex.slots.iter().map(|s| s.input).collect::<Vec<_>>())?;
    d.set_item("positions", ex.slots.iter().map(|s| s.position).collect::<Vec<_>>())?;
    let targets: Vec<Option<(u32, &str)>> = ex
        .targets
        .iter()
        .map(|t| {
            t.map(|t| {
                let kind = match t.kind {
                    TargetKind::Next => "next",
                    TargetKind::Mask => "mask",
                };
                (t.token, kind)
            })
        })
        .collect();
    d.set_item("targets", targets)?;
    Ok(d)
}

/// Whether slot `i` may attend slot `j` (1-based) in a single document.
#[pyfunction]
fn attention_allowed(n: usize, n_bidir: usize, i: usize, j: usize) -> PyResult<bool> {
    AttentionSpec::single(n, n_bidir).allowed(i, j).map_err(err)
}

/// Training cost in FLOPs for a named preset.
#[pyfunction]
#[pyo3(signature = (preset, tokens, max_len = 1024))]
fn flops(preset: &str, tokens: f64, max_len: usize) -> PyResult<f64> {
    let cfg = ModelConfig::from_preset(preset, bidirlm::model::PRESET_VOCAB).map_err(err)?;
    Ok(flops_estimate(&cfg, max_len, tokens))
}

/// Synthetic infill corpus: `count` token lists (vocabulary 32).
#[pyfunction]
fn infill_corpus(count: usize, seed: u64) -> Vec<Vec<u32>> {
    bidirlm::synthetic::infill_corpus(count, seed, "py").into_iter().map(|d| d.tokens().to_vec()).collect()
}

fn documents(docs: Vec<Vec<u32>>, eos: u32) -> PyResult<Vec<Document>> {
    docs.into_iter()
        .enumerate()
        .map(|(i, t)| Document::new(t, eos, format!("py:{i}")).map_err(err))
        .collect()
}

/// Decoder-only transformer in 32-bit precision.
#[pyclass(name = "Model", module = "pybidirlm")]
struct PyModel {
    params: Params<f32>,
    specials: SpecialTokens,
}

#[pymethods]
impl PyModel {
    /// Fresh model; the last three vocabulary ids are MASK, EOS and PAD.
    #[new]
    #[pyo3(signature = (vocab_size, layers = 4, d_model = 128, heads = 4, max_positions = 256, seed = 0))]
    fn new(vocab_size: usize, layers: usize, d_model: usize, heads: usize, max_positions: usize, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig { layers, d_model, heads, max_positions, ..ModelConfig::tiny(vocab_size) };
        let params = Params::init(&cfg, seed).map_err(err)?;
        Ok(PyModel { params, specials: SpecialTokens::at_end(vocab_size) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (params, _) = Params::<f32>::load(path).map_err(err)?;
        let specials = SpecialTokens::at_end(params.config.vocab_size);
        Ok(PyModel { params, specials })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.params.save(path, CheckpointMeta::default()).map_err(err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    fn checksum(&self) -> String {
        self.params.checksum(true)
    }

    /// Pre-train in place; returns the loss of every step.
    #[pyo3(signature = (docs, variant, steps, batch_size_tokens = 1024, learning_rate = 1e-3, max_len = 64, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        docs: Vec<Vec<u32>>,
        variant: &str,
        steps: u64,
        batch_size_tokens: usize,
        learning_rate: f64,
        max_len: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let variant = parse_variant(variant)?;
        let docs = documents(docs, self.specials.eos)?;
        let step_tokens = (batch_size_tokens / max_len.max(1) * max_len) as u64;
        let config = TrainConfig {
            variant,
            batch_size_tokens,
            learning_rate,
            warmup_tokens: step_tokens * (steps / 10).max(1),
            total_tokens: step_tokens * steps,
            max_len,
            seed,
            checkpoint_interval: 0,
            log_interval: 1,
            pack: true,
            optimizer: Default::default(),
        };
        let specials = self.specials;
        let params = self.params.clone();
        let (losses, params) = py
            .detach(move || -> bidirlm::Result<_> {
                let mut t = Trainer::new(config, params, &docs, specials)?;
                let mut losses = Vec::new();
                while !t.is_done() {
                    losses.push(t.train_step()?.loss);
                }
                Ok((losses, t.params))
            })
            .map_err(err)?;
        self.params = params;
        Ok(losses)
    }

    /// Full-document perplexity.
    fn perplexity(&self, docs: Vec<Vec<u32>>) -> PyResult<f64> {
        let docs = documents(docs, self.specials.eos)?;
        let r = eval::full_doc_perplexity(&self.params, &docs, self.specials.pad, &EvalConfig::default()).map_err(err)?;
        Ok(r.perplexity)
    }

    /// Perplexity of the last 20% of each document given the first 80%.
    #[pyo3(signature = (docs, r_bidir = 0.0))]
    fn suffix_perplexity(&self, docs: Vec<Vec<u32>>, r_bidir: f64) -> PyResult<f64> {
        let docs = documents(docs, self.specials.eos)?;
        let cfg = EvalConfig::default().with_r_bidir(r_bidir);
        let r = eval::suffix_perplexity(&self.params, &docs, self.specials.pad, &cfg).map_err(err)?;
        Ok(r.perplexity)
    }

    /// Direct infilling at a 1-based position: `(argmax, probabilities)`.
    #[pyo3(signature = (tokens, position, r_bidir = 0.0))]
    fn infill(&self, tokens: Vec<u32>, position: usize, r_bidir: f64) -> PyResult<(u32, Vec<f64>)> {
        let doc = Document::new(tokens, self.specials.eos, "py").map_err(err)?;
        let r = eval::infill_direct(&self.params, &doc, position, r_bidir, self.specials).map_err(err)?;
        Ok((r.argmax, r.probs))
    }

    /// Full-sequence scoring: the candidate whose substitution scores highest.
    fn infill_full(&self, tokens: Vec<u32>, position: usize, candidates: Vec<u32>) -> PyResult<u32> {
        let doc = Document::new(tokens, self.specials.eos, "py").map_err(err)?;
        let item = InfillItem { doc: &doc, position };
        let r = eval::infill_full_scoring_batch(
            &self.params,
            &[item],
            &[candidates],
            eval::FullScope::Document,
            self.specials.pad,
            32,
        )
        .map_err(err)?;
        Ok(r[0].best)
    }
}

#[pymodule]
fn pybidirlm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTokenizer>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(sample_plan, m)?)?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(attention_allowed, m)?)?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(infill_corpus, m)?)?;
    Ok(())
}
