use ndarray::{Array1, Array2, ArrayView1};

use crate::error::Result;
use crate::model::Params;
use crate::objective::{AttentionSpec, PackedBatch, PackedSequence};
use crate::scalar::Scalar;

/// Anything that yields vocabulary logits for slots of a packed batch.
pub trait LogitModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Logits at the given flat rows (`sequence * max_len + slot`), one
    /// output row per requested row.
    fn logits_at(&self, batch: &PackedBatch, rows: &[usize]) -> Result<Array2<f64>>;
}

impl<T: Scalar> LogitModel for Params<T> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn logits_at(&self, batch: &PackedBatch, rows: &[usize]) -> Result<Array2<f64>> {
        Ok(Params::logits_at(self, batch, rows)?.mapv(|v| v.as_f64()))
    }
}

/// Zero logits everywhere: every token equally likely.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    pub vocab_size: usize,
}

impl LogitModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits_at(&self, _batch: &PackedBatch, rows: &[usize]) -> Result<Array2<f64>> {
        Ok(Array2::zeros((rows.len(), self.vocab_size)))
    }
}

/// Adds a constant to every logit of the wrapped model.
#[derive(Debug, Clone)]
pub struct ShiftedModel<M> {
    pub inner: M,
    pub shift: f64,
}

impl<M: LogitModel> LogitModel for ShiftedModel<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn logits_at(&self, batch: &PackedBatch, rows: &[usize]) -> Result<Array2<f64>> {
        Ok(self.inner.logits_at(batch, rows)? + self.shift)
    }
}

pub fn log_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.mapv(|x| x - lse)
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// A single unpermuted sequence with prefix `n_bidir`, padded to `max_len`.
pub(crate) fn plain_sequence(tokens: &[u32], n_bidir: usize, max_len: usize, pad: u32) -> PackedSequence {
    let n = tokens.len();
    let mut input_ids = tokens.to_vec();
    input_ids.resize(max_len, pad);
    PackedSequence {
        input_ids,
        position_ids: (1..=max_len as u32).collect(),
        target_ids: vec![0; max_len],
        target_kinds: vec![None; max_len],
        valid: vec![false; max_len],
        attention: AttentionSpec {
            len: max_len,
            docs: vec![crate::objective::DocSpan { start: 1, end: n, n_bidir }],
        },
    }
}

/// Log-probability of `tokens[p]` given slot `p - 1` for every `p ≥ 1`,
/// per sequence, under attention prefix `n_bidir[i]`. Sequences are scored
/// in chunks of `batch_size`, one per row.
pub(crate) fn next_token_logprobs<M: LogitModel + ?Sized>(
    model: &M,
    seqs: &[(&[u32], usize)],
    pad: u32,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let chunks: Vec<_> = seqs.chunks(batch_size.max(1)).collect();
    let out: Vec<Vec<Vec<f64>>> = chunks
        .par_iter()
        .map(|chunk| -> Result<Vec<Vec<f64>>> {
            let max_len = chunk.iter().map(|(t, _)| t.len()).max().unwrap_or(0);
            let sequences = chunk
                .iter()
                .map(|(t, nb)| plain_sequence(t, *nb, max_len, pad))
                .collect();
            let batch = PackedBatch { max_len, sequences };
            let mut rows = Vec::new();
            for (s, (t, _)) in chunk.iter().enumerate() {
                rows.extend((0..t.len().saturating_sub(1)).map(|k| s * max_len + k));
            }
            let logits = model.logits_at(&batch, &rows)?;
            let mut r = 0;
            Ok(chunk
                .iter()
                .map(|(t, _)| {
                    (1..t.len())
                        .map(|p| {
                            let lp = log_softmax(logits.row(r))[t[p] as usize];
                            r += 1;
                            lp
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.49), 2);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn log_softmax_normalizes() {
        let v = ndarray::arr1(&[1.0, 2.0, 3.0]);
        let s: f64 = log_softmax(v.view()).iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
