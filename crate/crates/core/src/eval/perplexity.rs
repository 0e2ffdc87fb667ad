use serde::{Deserialize, Serialize};

use super::scorer::{next_token_logprobs, round_half_up, LogitModel};
use super::EvalConfig;
use crate::data::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub mean_nll: f64,
    pub tokens: usize,
}

impl PerplexityReport {
    fn from_nll(values: impl Iterator<Item = f64>) -> Result<Self> {
        let (sum, tokens) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if tokens == 0 {
            return Err(Error::InvalidEval("nothing to score".into()));
        }
        let mean_nll = sum / tokens as f64;
        Ok(PerplexityReport { perplexity: mean_nll.exp(), mean_nll, tokens })
    }
}

/// Causal NLL of every next-token prediction, per document. Entry `k` is
/// the NLL of the token at position `k + 2` given positions `1..=k+1`.
pub fn next_token_nll<M: LogitModel + ?Sized>(
    model: &M,
    docs: &[Document],
    pad: u32,
    cfg: &EvalConfig,
) -> Result<Vec<Vec<f64>>> {
    let seqs: Vec<(&[u32], usize)> = docs.iter().map(|d| (d.tokens(), 0)).collect();
    let lp = next_token_logprobs(model, &seqs, pad, cfg.batch_size)?;
    Ok(lp.into_iter().map(|v| v.into_iter().map(|x| -x).collect()).collect())
}

/// Every document scored alone from position 1 with causal attention.
pub fn full_doc_perplexity<M: LogitModel + ?Sized>(
    model: &M,
    docs: &[Document],
    pad: u32,
    cfg: &EvalConfig,
) -> Result<PerplexityReport> {
    if docs.is_empty() {
        return Err(Error::InvalidEval("empty document set".into()));
    }
    let nll = next_token_nll(model, docs, pad, cfg)?;
    PerplexityReport::from_nll(nll.into_iter().flatten())
}

/// `(n_prefix, n_bidir)` with `n_prefix = floor(suffix_ratio · n)` and
/// `n_bidir = round_half_up(r_bidir · n_prefix)`.
pub fn suffix_plan(n: usize, cfg: &EvalConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    if n < 5 {
        return Err(Error::InvalidEval(format!("document of length {n} is too short for suffix scoring")));
    }
    let n_prefix = (cfg.suffix_ratio * n as f64).floor() as usize;
    let n_bidir = round_half_up(cfg.r_bidir * n_prefix as f64).min(n_prefix);
    Ok((n_prefix, n_bidir))
}

/// Perplexity of the tokens after the first `n_prefix` of each document,
/// with a bidirectional prefix of `n_bidir` slots.
pub fn suffix_perplexity<M: LogitModel + ?Sized>(
    model: &M,
    docs: &[Document],
    pad: u32,
    cfg: &EvalConfig,
) -> Result<PerplexityReport> {
    if docs.is_empty() {
        return Err(Error::InvalidEval("empty document set".into()));
    }
    let plans = docs.iter().map(|d| suffix_plan(d.len(), cfg)).collect::<Result<Vec<_>>>()?;
    let seqs: Vec<(&[u32], usize)> = docs.iter().zip(&plans).map(|(d, &(_, nb))| (d.tokens(), nb)).collect();
    let lp = next_token_logprobs(model, &seqs, pad, cfg.batch_size)?;
    // Position q is predicted by entry q - 2; the suffix is q in n_prefix+1..=n.
    let suffix = lp
        .iter()
        .zip(&plans)
        .flat_map(|(v, &(n_prefix, _))| v[n_prefix - 1..].iter().map(|x| -x));
    PerplexityReport::from_nll(suffix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::UniformModel;

    fn doc(n: usize) -> Document {
        let mut t: Vec<u32> = (1..n as u32).collect();
        t.push(0);
        Document::new(t, 0, "d").unwrap()
    }

    #[test]
    fn suffix_arithmetic() {
        let cfg = EvalConfig::default().with_r_bidir(0.5);
        assert_eq!(suffix_plan(10, &cfg).unwrap(), (8, 4));
        assert!(suffix_plan(4, &cfg).is_err());
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let m = UniformModel { vocab_size: 50 };
        let cfg = EvalConfig::default();
        let r = full_doc_perplexity(&m, &[doc(7), doc(12)], 49, &cfg).unwrap();
        assert!((r.perplexity - 50.0).abs() < 1e-9);
        assert_eq!(r.tokens, 6 + 11);
        let s = suffix_perplexity(&m, &[doc(10)], 49, &cfg).unwrap();
        assert_eq!(s.tokens, 2);
        assert!(full_doc_perplexity(&m, &[], 49, &cfg).is_err());
    }
}
