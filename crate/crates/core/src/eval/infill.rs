use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scorer::{log_softmax, next_token_logprobs, round_half_up, LogitModel};
use crate::data::{Document, SpecialTokens};
use crate::error::{Error, Result};
use crate::objective::{transform, PackedBatch, TransformPlan};

/// One masked position (1-based) in one document.
#[derive(Debug, Clone, Copy)]
pub struct InfillItem<'a> {
    pub doc: &'a Document,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfillResult {
    /// Predictive distribution over the whole vocabulary.
    pub probs: Vec<f64>,
    pub argmax: u32,
}

/// Which next-token predictions count towards a full-scoring candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FullScope {
    /// Every next-token prediction of the document.
    #[default]
    Document,
    /// Only predictions of the masked position and the tokens after it.
    SuffixFromMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullScore {
    pub best: u32,
    /// `(candidate, total log-probability)` in ascending candidate order.
    pub scores: Vec<(u32, f64)>,
}

fn check_position(doc: &Document, position: usize) -> Result<()> {
    if position == doc.len() {
        return Err(Error::InvalidEval("cannot mask the EOS position".into()));
    }
    if position == 0 || position > doc.len() {
        return Err(Error::InvalidEval(format!(
            "position {position} outside document of length {}",
            doc.len()
        )));
    }
    Ok(())
}

fn argmax(values: &[f64]) -> usize {
    // first maximum wins, so ties go to the lowest index
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Distribution at the moved mask slot for each item: the training-time
/// transformation with a single mask and `n_bidir = round_half_up(r_bidir · n)`.
pub fn infill_direct_batch<M: LogitModel + ?Sized>(
    model: &M,
    items: &[InfillItem<'_>],
    r_bidir: f64,
    specials: SpecialTokens,
    batch_size: usize,
) -> Result<Vec<InfillResult>> {
    if !(0.0..=1.0).contains(&r_bidir) {
        return Err(Error::InvalidEval(format!("r_bidir {r_bidir} outside [0, 1]")));
    }
    let chunks: Vec<_> = items.chunks(batch_size.max(1)).collect();
    let out: Vec<Vec<InfillResult>> = chunks
        .par_iter()
        .map(|chunk| -> Result<Vec<InfillResult>> {
            let mut examples = Vec::with_capacity(chunk.len());
            for it in chunk.iter() {
                check_position(it.doc, it.position)?;
                let n = it.doc.len();
                let n_bidir = round_half_up(r_bidir * n as f64).min(n);
                let plan = TransformPlan::new(n, vec![it.position], n_bidir, 1)?;
                examples.push(transform(it.doc, &plan, specials.mask)?);
            }
            let batch = PackedBatch::one_per_row(&examples, specials.pad)?;
            let rows: Vec<usize> = examples
                .iter()
                .enumerate()
                .map(|(s, e)| s * batch.max_len + e.len() - 1)
                .collect();
            let logits = model.logits_at(&batch, &rows)?;
            Ok(logits
                .outer_iter()
                .map(|row| {
                    let probs: Vec<f64> = log_softmax(row).iter().map(|x| x.exp()).collect();
                    let argmax = argmax(&probs) as u32;
                    InfillResult { probs, argmax }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

pub fn infill_direct<M: LogitModel + ?Sized>(
    model: &M,
    doc: &Document,
    position: usize,
    r_bidir: f64,
    specials: SpecialTokens,
) -> Result<InfillResult> {
    let item = InfillItem { doc, position };
    Ok(infill_direct_batch(model, &[item], r_bidir, specials, 1)?.remove(0))
}

/// Fraction of items whose direct-infill argmax is the original token.
pub fn infill_accuracy<M: LogitModel + ?Sized>(
    model: &M,
    items: &[InfillItem<'_>],
    r_bidir: f64,
    specials: SpecialTokens,
    batch_size: usize,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidEval("no infill items".into()));
    }
    let results = infill_direct_batch(model, items, r_bidir, specials, batch_size)?;
    let hits = items
        .iter()
        .zip(&results)
        .filter(|(it, r)| r.argmax == it.doc.at(it.position))
        .count();
    Ok(hits as f64 / items.len() as f64)
}

/// The `k` most probable fillers under direct infilling, most probable
/// first (ties by lower id).
pub fn topk_candidates<M: LogitModel + ?Sized>(
    model: &M,
    doc: &Document,
    position: usize,
    k: usize,
    r_bidir: f64,
    specials: SpecialTokens,
) -> Result<Vec<u32>> {
    if k == 0 || k > model.vocab_size() {
        return Err(Error::InvalidEval(format!("k = {k} must lie in 1..={}", model.vocab_size())));
    }
    let r = infill_direct(model, doc, position, r_bidir, specials)?;
    let mut ids: Vec<u32> = (0..r.probs.len() as u32).collect();
    ids.sort_by(|&a, &b| r.probs[b as usize].total_cmp(&r.probs[a as usize]).then(a.cmp(&b)));
    ids.truncate(k);
    Ok(ids)
}

/// Substitute each candidate at the item's position and score the result
/// causally; the highest total log-probability wins, ties going to the
/// lowest id.
pub fn infill_full_scoring_batch<M: LogitModel + ?Sized>(
    model: &M,
    items: &[InfillItem<'_>],
    candidates: &[Vec<u32>],
    scope: FullScope,
    pad: u32,
    batch_size: usize,
) -> Result<Vec<FullScore>> {
    if items.len() != candidates.len() {
        return Err(Error::InvalidEval("one candidate list per item is required".into()));
    }
    let mut filled: Vec<Vec<u32>> = Vec::new();
    let mut sorted: Vec<Vec<u32>> = Vec::with_capacity(items.len());
    for (it, cands) in items.iter().zip(candidates) {
        check_position(it.doc, it.position)?;
        if cands.is_empty() {
            return Err(Error::InvalidEval("empty candidate set".into()));
        }
        let mut c = cands.clone();
        c.sort_unstable();
        c.dedup();
        if let Some(&bad) = c.iter().find(|&&c| c as usize >= model.vocab_size()) {
            return Err(Error::TokenOutOfVocab { id: bad, vocab_size: model.vocab_size() });
        }
        for &cand in &c {
            let mut t = it.doc.tokens().to_vec();
            t[it.position - 1] = cand;
            filled.push(t);
        }
        sorted.push(c);
    }
    let seqs: Vec<(&[u32], usize)> = filled.iter().map(|t| (t.as_slice(), 0)).collect();
    let lp = next_token_logprobs(model, &seqs, pad, batch_size)?;
    let mut lp = lp.into_iter();
    Ok(items
        .iter()
        .zip(sorted)
        .map(|(it, cands)| {
            let scores: Vec<(u32, f64)> = cands
                .into_iter()
                .map(|c| {
                    let v = lp.next().expect("one score per candidate");
                    let from = match scope {
                        FullScope::Document => 0,
                        FullScope::SuffixFromMask => it.position.saturating_sub(2),
                    };
                    (c, v[from..].iter().sum())
                })
                .collect();
            let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
            FullScore { best: scores[argmax(&values)].0, scores }
        })
        .collect())
}

pub fn infill_full_scoring<M: LogitModel + ?Sized>(
    model: &M,
    doc: &Document,
    position: usize,
    candidates: &[u32],
    scope: FullScope,
    pad: u32,
) -> Result<FullScore> {
    let item = InfillItem { doc, position };
    let n = candidates.len().max(1);
    Ok(infill_full_scoring_batch(model, &[item], &[candidates.to_vec()], scope, pad, n)?.remove(0))
}
