//! Sequence classification on top of a pretrained model.
//!
//! An input is `text_a EOS` or `text_a EOS text_b EOS`. A linear head reads
//! the final hidden state at the last EOS slot. The attention prefix is
//! `round_half_up(r_bidir · n)`, so `r_bidir = 0` is causal and `r_bidir = 1`
//! lets every token see the whole input.

use std::io::BufRead;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TokenizerModel;
use crate::error::{Error, Result};
use crate::eval::{log_softmax, plain_sequence, round_half_up};
use crate::model::Params;
use crate::objective::PackedBatch;
use crate::scalar::Scalar;
use crate::seed::substream;
use crate::trainer::{AdamW, AdamWConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsRecord {
    pub text_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub label: usize,
}

/// An encoded example; `tokens` ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClsExample {
    pub tokens: Vec<u32>,
    pub label: usize,
}

impl ClsExample {
    /// Encode a record, keeping at most `max_len` tokens (the final EOS
    /// always survives truncation).
    pub fn encode(rec: &ClsRecord, tok: &TokenizerModel, max_len: usize) -> Result<Self> {
        let eos = tok.specials().eos;
        let mut tokens = tok.encode(&rec.text_a);
        tokens.push(eos);
        if let Some(b) = &rec.text_b {
            tokens.extend(tok.encode(b));
            tokens.push(eos);
        }
        Self::from_tokens(tokens, rec.label, eos, max_len)
    }

    pub fn from_tokens(mut tokens: Vec<u32>, label: usize, eos: u32, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::InvalidFinetune("max_len must be positive".into()));
        }
        if tokens.last() != Some(&eos) {
            tokens.push(eos);
        }
        if tokens.len() > max_len {
            tokens.truncate(max_len - 1);
            tokens.push(eos);
        }
        Ok(ClsExample { tokens, label })
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<ClsRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ClsRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(std::io::BufReader::new(f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsDataset {
    pub train: Vec<ClsExample>,
    pub dev: Vec<ClsExample>,
    pub num_labels: usize,
}

impl ClsDataset {
    /// Labels across both splits must cover `0..K` for some `K ≥ 2`.
    pub fn new(train: Vec<ClsExample>, dev: Vec<ClsExample>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidFinetune("empty train split".into()));
        }
        if dev.is_empty() {
            return Err(Error::InvalidFinetune("empty dev split".into()));
        }
        let num_labels = train.iter().chain(&dev).map(|e| e.label).max().unwrap_or(0) + 1;
        let mut seen = vec![false; num_labels];
        for e in train.iter().chain(&dev) {
            seen[e.label] = true;
        }
        if num_labels < 2 || seen.iter().any(|s| !s) {
            return Err(Error::InvalidFinetune(format!(
                "labels must be dense 0..K with K >= 2, found max label {}",
                num_labels - 1
            )));
        }
        Ok(ClsDataset { train, dev, num_labels })
    }

    /// Fraction of dev examples carrying the most common dev label.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.num_labels];
        for e in &self.dev {
            counts[e.label] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.dev.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneGrid {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub r_bidirs: Vec<f64>,
    /// Optimizer updates per cell.
    pub updates: u64,
    /// Fraction of `updates` spent in linear warmup.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for FinetuneGrid {
    fn default() -> Self {
        FinetuneGrid {
            learning_rates: vec![5e-6, 1e-5, 2e-5, 5e-5],
            batch_sizes: vec![16, 32, 64],
            r_bidirs: vec![0.0, 1.0],
            updates: 2000,
            warmup_fraction: 0.06,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl FinetuneGrid {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.batch_sizes.is_empty() || self.r_bidirs.is_empty() {
            return Err(Error::InvalidFinetune("grid has an empty axis".into()));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::InvalidFinetune("learning rates must be positive".into()));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::InvalidFinetune("batch sizes must be positive".into()));
        }
        if self.r_bidirs.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidFinetune("r_bidir must lie in [0, 1]".into()));
        }
        if self.updates == 0 {
            return Err(Error::InvalidFinetune("updates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidFinetune("warmup_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Cells in table order: learning rate, then batch size, then r_bidir.
    pub fn cells(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &b in &self.batch_sizes {
                for &r in &self.r_bidirs {
                    out.push((lr, b, r));
                }
            }
        }
        out
    }

    /// Linear warmup to `peak`, then linear decay to zero at `updates`.
    pub fn lr_at(&self, peak: f64, step: u64) -> f64 {
        let warm = (self.warmup_fraction * self.updates as f64).round() as u64;
        if step < warm {
            peak * (step + 1) as f64 / warm as f64
        } else {
            let span = (self.updates - warm).max(1) as f64;
            peak * (1.0 - (step - warm) as f64 / span).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub batch_size: usize,
    pub r_bidir: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub cells: Vec<GridCell>,
    pub best: GridCell,
}

impl FinetuneReport {
    fn from_cells(cells: Vec<GridCell>) -> Self {
        let mut best = cells[0];
        for c in &cells {
            if c.dev_accuracy > best.dev_accuracy {
                best = *c;
            }
        }
        FinetuneReport { cells, best }
    }

    /// Best cell among those with the given `r_bidir`.
    pub fn best_for(&self, r_bidir: f64) -> Option<GridCell> {
        self.cells
            .iter()
            .filter(|c| c.r_bidir == r_bidir)
            .fold(None, |acc: Option<GridCell>, c| match acc {
                Some(a) if a.dev_accuracy >= c.dev_accuracy => Some(a),
                _ => Some(*c),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lr,batch,r_bidir,dev_accuracy\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{},{}\n", c.lr, c.batch_size, c.r_bidir, c.dev_accuracy));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: usize,
    pub probs: Vec<f64>,
}

fn cls_batch(examples: &[&ClsExample], r_bidir: f64, pad: u32) -> (PackedBatch, Vec<usize>) {
    let max_len = examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    let sequences = examples
        .iter()
        .map(|e| {
            let n = e.tokens.len();
            plain_sequence(&e.tokens, round_half_up(r_bidir * n as f64).min(n), max_len, pad)
        })
        .collect();
    let rows = examples.iter().enumerate().map(|(s, e)| s * max_len + e.tokens.len() - 1).collect();
    (PackedBatch { max_len, sequences }, rows)
}

fn head<T: Scalar>(params: &Params<T>) -> Result<(usize, usize)> {
    params.head_indices().ok_or(Error::HeadMissing)
}

/// Head logits at the final slot of each example.
pub fn classify_logits<T: Scalar>(
    params: &Params<T>,
    examples: &[&ClsExample],
    r_bidir: f64,
    pad: u32,
) -> Result<Array2<f64>> {
    let (w, b) = head(params)?;
    let (batch, rows) = cls_batch(examples, r_bidir, pad);
    let h = params.hidden(&batch)?.select(ndarray::Axis(0), &rows);
    Ok((h.dot(&params.tensors[w]) + &params.tensors[b]).mapv(|v| v.as_f64()))
}

pub fn classify<T: Scalar>(params: &Params<T>, tokens: &[u32], r_bidir: f64, pad: u32) -> Result<Classification> {
    if tokens.is_empty() {
        return Err(Error::InvalidFinetune("empty input".into()));
    }
    let ex = ClsExample { tokens: tokens.to_vec(), label: 0 };
    let logits = classify_logits(params, &[&ex], r_bidir, pad)?;
    let probs: Vec<f64> = log_softmax(logits.row(0)).iter().map(|x| x.exp()).collect();
    let mut label = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[label] {
            label = k;
        }
    }
    Ok(Classification { label, probs })
}

pub fn accuracy<T: Scalar>(params: &Params<T>, examples: &[ClsExample], r_bidir: f64, pad: u32) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidFinetune("no examples to score".into()));
    }
    let mut hits = 0;
    for chunk in examples.chunks(64) {
        let refs: Vec<&ClsExample> = chunk.iter().collect();
        let logits = classify_logits(params, &refs, r_bidir, pad)?;
        for (row, e) in logits.outer_iter().zip(chunk) {
            let mut arg = 0;
            for k in 0..row.len() {
                if row[k] > row[arg] {
                    arg = k;
                }
            }
            hits += usize::from(arg == e.label);
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Mean classification NLL and the gradient for every parameter tensor.
pub fn cls_loss_and_grad<T: Scalar>(
    params: &Params<T>,
    examples: &[&ClsExample],
    r_bidir: f64,
    pad: u32,
) -> Result<(f64, Vec<Array2<T>>)> {
    let (w, b) = head(params)?;
    let (batch, rows) = cls_batch(examples, r_bidir, pad);
    let targets: Vec<Option<usize>> = examples.iter().map(|e| Some(e.label)).collect();
    let mut g = params.graph(&batch)?;
    let h = g.tape.gather(g.hidden, rows);
    let logits = g.tape.linear(h, g.params[w], g.params[b]);
    let (loss, _) = g.tape.cross_entropy(logits, &targets);
    let value = g.tape.value(loss)[[0, 0]].as_f64();
    let mut grads = g.tape.backward(loss);
    Ok((value, g.param_grads(&mut grads)))
}

/// One gradient step of the classification loss; returns the mean NLL.
pub fn cls_step<T: Scalar>(
    params: &mut Params<T>,
    opt: &mut AdamW<T>,
    examples: &[&ClsExample],
    r_bidir: f64,
    pad: u32,
    lr: f64,
) -> Result<f64> {
    let (loss, grads) = cls_loss_and_grad(params, examples, r_bidir, pad)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: opt.t + 1, loss });
    }
    opt.step(&mut params.tensors, grads, lr);
    Ok(loss)
}

/// Fine-tune a fresh copy of `base` (which must not carry a head) with one
/// grid setting and return the tuned parameters.
pub fn finetune_cell<T: Scalar>(
    base: &Params<T>,
    data: &ClsDataset,
    grid: &FinetuneGrid,
    lr: f64,
    batch_size: usize,
    r_bidir: f64,
    pad: u32,
) -> Result<Params<T>> {
    let mut params = base.clone();
    params.attach_head(data.num_labels, grid.seed)?;
    let mut opt = AdamW::new(grid.optimizer, &params.tensors);
    let mut rng = substream(grid.seed, "finetune");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut cursor = order.len();
    for step in 0..grid.updates {
        let mut picked = Vec::with_capacity(batch_size);
        while picked.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&data.train[order[cursor]]);
            cursor += 1;
        }
        cls_step(&mut params, &mut opt, &picked, r_bidir, pad, grid.lr_at(lr, step))?;
    }
    Ok(params)
}

/// Run every grid cell (in parallel) and report dev accuracy per cell.
pub fn finetune<T: Scalar>(base: &Params<T>, data: &ClsDataset, grid: &FinetuneGrid, pad: u32) -> Result<FinetuneReport> {
    grid.validate()?;
    if base.num_labels().is_some() {
        return Err(Error::HeadAlreadyPresent);
    }
    let cells = grid
        .cells()
        .into_par_iter()
        .map(|(lr, batch_size, r_bidir)| {
            let tuned = finetune_cell(base, data, grid, lr, batch_size, r_bidir, pad)?;
            let dev_accuracy = accuracy(&tuned, &data.dev, r_bidir, pad)?;
            Ok(GridCell { lr, batch_size, r_bidir, dev_accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FinetuneReport::from_cells(cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    const EOS: u32 = 30;
    const PAD: u32 = 31;

    fn small() -> Params<f64> {
        let cfg = ModelConfig { layers: 1, d_model: 16, heads: 2, max_positions: 16, vocab_size: 32, ..ModelConfig::tiny(32) };
        Params::init(&cfg, 0).unwrap()
    }

    fn ex(tokens: &[u32], label: usize) -> ClsExample {
        ClsExample::from_tokens(tokens.to_vec(), label, EOS, 16).unwrap()
    }

    #[test]
    fn grid_defaults_and_cell_count() {
        let g = FinetuneGrid::default();
        assert_eq!(g.cells().len(), 24);
        assert_eq!(g.updates, 2000);
        assert!((g.lr_at(1e-5, 2000 - 1) - 1e-5 / (2000.0 - 120.0)).abs() < 1e-12);
        let empty = FinetuneGrid { batch_sizes: vec![], ..g };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn dataset_requires_dense_labels_and_dev() {
        assert!(ClsDataset::new(vec![ex(&[1], 0)], vec![]).is_err());
        assert!(ClsDataset::new(vec![ex(&[1], 0)], vec![ex(&[2], 2)]).is_err());
        let d = ClsDataset::new(vec![ex(&[1], 0)], vec![ex(&[2], 1)]).unwrap();
        assert_eq!(d.num_labels, 2);
    }

    #[test]
    fn truncation_keeps_eos() {
        let e = ClsExample::from_tokens((0..20).collect(), 0, EOS, 8).unwrap();
        assert_eq!(e.tokens.len(), 8);
        assert_eq!(*e.tokens.last().unwrap(), EOS);
    }

    #[test]
    fn classify_needs_head_and_normalizes() {
        let mut p = small();
        assert!(matches!(classify(&p, &[1, 2, EOS], 0.0, PAD), Err(Error::HeadMissing)));
        p.attach_head(3, 1).unwrap();
        let c = classify(&p, &[1, 2, EOS], 1.0, PAD).unwrap();
        assert_eq!(c.probs.len(), 3);
        assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(c, classify(&p, &[1, 2, EOS], 1.0, PAD).unwrap());
    }

    #[test]
    fn causal_classifier_ignores_trailing_pad() {
        let mut p = small();
        p.attach_head(2, 0).unwrap();
        let a = ex(&[3, 4, 5], 0);
        let b = ex(&[1, 2, 3, 4, 5, 6], 1);
        let alone = classify_logits(&p, &[&a], 0.0, PAD).unwrap();
        let padded = classify_logits(&p, &[&a, &b], 0.0, PAD).unwrap();
        for k in 0..2 {
            assert!((alone[[0, k]] - padded[[0, k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn one_cell_grid_reports_its_only_row() {
        let p = small();
        let data = ClsDataset::new(vec![ex(&[1, 2], 0), ex(&[20, 21], 1)], vec![ex(&[1], 0), ex(&[20], 1)]).unwrap();
        let grid = FinetuneGrid {
            learning_rates: vec![1e-3],
            batch_sizes: vec![2],
            r_bidirs: vec![0.0],
            updates: 3,
            ..FinetuneGrid::default()
        };
        let r = finetune(&p, &data, &grid, PAD).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0], r.best);
        assert!(r.to_csv().starts_with("lr,batch,r_bidir,dev_accuracy\n"));
    }
}
