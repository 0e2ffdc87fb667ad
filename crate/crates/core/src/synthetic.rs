//! Synthetic data with known structure, used by tests and demos.
//!
//! The infill language has a 32-token vocabulary: content tokens `0..29`,
//! then MASK = 29, EOS = 30 and PAD = 31. A document is 23 content tokens
//! plus EOS. Content tokens at even 0-based indices are free, drawn with
//! probability proportional to `1 / (t + 1)`; each token at an odd index
//! equals `(left + right) mod 29`.
//!
//! The skewed draw matters for learnability. With uniform free tokens a
//! single neighbour says nothing about a determined token, so the first
//! useful gradient only appears once the model already combines both
//! neighbours, and small models sit at chance for a long time.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::data::{Document, SpecialTokens};
use crate::seed::substream;

pub const INFILL_VOCAB: usize = 32;
pub const MODULUS: u32 = 29;
pub const CONTENT_LEN: usize = 23;
pub const DOC_LEN: usize = CONTENT_LEN + 1;

pub const INFILL_SPECIALS: SpecialTokens = SpecialTokens { mask: 29, eos: 30, pad: 31 };

pub fn infill_document<R: Rng + ?Sized>(rng: &mut R, source_id: impl Into<String>) -> Document {
    let mut content = vec![0u32; CONTENT_LEN];
    let dist = WeightedIndex::new((0..MODULUS).map(|t| 1.0 / f64::from(t + 1))).expect("positive weights");
    for i in (0..CONTENT_LEN).step_by(2) {
        content[i] = dist.sample(rng) as u32;
    }
    for i in (1..CONTENT_LEN).step_by(2) {
        content[i] = (content[i - 1] + content[i + 1]) % MODULUS;
    }
    content.push(INFILL_SPECIALS.eos);
    Document::new(content, INFILL_SPECIALS.eos, source_id).expect("well-formed by construction")
}

/// `count` documents from the named substream of `seed`.
pub fn infill_corpus(count: usize, seed: u64, name: &str) -> Vec<Document> {
    let mut rng = substream(seed, name);
    (0..count).map(|i| infill_document(&mut rng, format!("{name}:{i}"))).collect()
}

/// 1-based positions of the determined tokens (odd 0-based indices).
pub fn determined_positions() -> impl Iterator<Item = usize> {
    (2..=CONTENT_LEN).step_by(2)
}

/// Whether every determined token agrees with its neighbours.
pub fn is_consistent(tokens: &[u32]) -> bool {
    tokens.len() == DOC_LEN
        && tokens[CONTENT_LEN] == INFILL_SPECIALS.eos
        && (1..CONTENT_LEN)
            .step_by(2)
            .all(|i| tokens[i] == (tokens[i - 1] + tokens[i + 1]) % MODULUS)
}

/// A labelled token sequence for classification tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledTokens {
    pub tokens: Vec<u32>,
    pub label: usize,
}

/// Two classes over the infill vocabulary: class 0 draws content tokens
/// from `0..14`, class 1 from `14..28`. Lengths vary from 6 to 12 and
/// labels alternate, so the classes are balanced and linearly separable
/// by token identity.
pub fn separable_task(count: usize, seed: u64, name: &str) -> Vec<LabelledTokens> {
    let mut rng = substream(seed, name);
    (0..count)
        .map(|i| {
            let label = i % 2;
            let base = 14 * label as u32;
            let len = rng.random_range(6..=12);
            let tokens = (0..len).map(|_| base + rng.random_range(0..14)).collect();
            LabelledTokens { tokens, label }
        })
        .collect()
}

const WORDS: [&str; 24] = [
    "the", "a", "model", "reads", "writes", "token", "mask", "moves", "to", "end", "and", "attends", "left",
    "right", "context", "prefix", "window", "loss", "predicts", "next", "word", "small", "corpus", "quietly",
];

/// Plain-text corpus of `docs` short paragraphs separated by blank lines.
pub fn toy_text_corpus(docs: usize, seed: u64) -> String {
    let mut rng = substream(seed, "toy-text");
    let mut out = String::new();
    for d in 0..docs {
        if d > 0 {
            out.push_str("\n\n");
        }
        let sentences = rng.random_range(1..=3);
        for s in 0..sentences {
            if s > 0 {
                out.push(' ');
            }
            let n = rng.random_range(4..=9);
            let words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            out.push_str(&words.join(" "));
            out.push('.');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_obey_the_rule() {
        let docs = infill_corpus(50, 1, "t");
        assert!(docs.iter().all(|d| d.len() == DOC_LEN && is_consistent(d.tokens())));
        assert!(docs.iter().all(|d| d.tokens()[..CONTENT_LEN].iter().all(|&t| t < MODULUS)));
        assert_eq!(determined_positions().count(), 11);
        let mut bad = docs[0].tokens().to_vec();
        bad[1] = (bad[1] + 1) % MODULUS;
        assert!(!is_consistent(&bad));
    }

    #[test]
    fn separable_classes_do_not_share_tokens() {
        let items = separable_task(40, 2, "cls");
        for it in &items {
            let lo = 14 * it.label as u32;
            assert!(it.tokens.iter().all(|&t| (lo..lo + 14).contains(&t)));
        }
        assert_eq!(items.iter().filter(|i| i.label == 1).count(), 20);
    }

    #[test]
    fn toy_corpus_has_the_requested_documents() {
        let text = toy_text_corpus(12, 3);
        assert_eq!(text.split("\n\n").count(), 12);
        assert_eq!(text, toy_text_corpus(12, 3));
    }
}
