//! Byte-level BPE tokenizer.
//!
//! Ids `0..256` are raw bytes, ids `256..256 + merges` are learned merges in
//! priority order, and the final three ids are MASK, EOS and PAD. Text is
//! split into chunks at whitespace boundaries (a chunk owns the whitespace
//! that precedes it) and merges never cross a chunk boundary.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BYTE_SYMBOLS: usize = 256;
pub const NUM_SPECIALS: usize = 3;
pub const MIN_VOCAB: usize = BYTE_SYMBOLS + NUM_SPECIALS;

const FORMAT_HEADER: &str = "#bidirlm-bpe v1";

/// Ids of the reserved symbols. MASK replaces masked inputs, EOS closes every
/// document and PAD fills packed sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SpecialTokens {
    pub mask: u32,
    pub eos: u32,
    pub pad: u32,
}

impl SpecialTokens {
    /// Specials occupying the last three ids of a vocabulary.
    pub fn at_end(vocab_size: usize) -> Self {
        let v = vocab_size as u32;
        SpecialTokens {
            mask: v - 3,
            eos: v - 2,
            pad: v - 1,
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        id == self.mask || id == self.eos || id == self.pad
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerModel {
    merges: Vec<(u32, u32)>,
    vocab: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
    specials: SpecialTokens,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\n' | b'\t' | b'\r')
}

/// Split into chunks; a new chunk starts at whitespace that follows a
/// non-whitespace byte.
fn chunks(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let mut i = start + 1;
        while i < bytes.len() && !(is_space(bytes[i]) && !is_space(bytes[i - 1])) {
            i += 1;
        }
        let chunk = &bytes[start..i];
        start = i;
        Some(chunk)
    })
}

struct Word {
    symbols: Vec<u32>,
    count: i64,
}

impl Word {
    fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.symbols.windows(2).map(|w| (w[0], w[1]))
    }

    fn merge(&mut self, pair: (u32, u32), new_id: u32) {
        let mut out = Vec::with_capacity(self.symbols.len());
        let mut i = 0;
        while i < self.symbols.len() {
            if i + 1 < self.symbols.len() && (self.symbols[i], self.symbols[i + 1]) == pair {
                out.push(new_id);
                i += 2;
            } else {
                out.push(self.symbols[i]);
                i += 1;
            }
        }
        self.symbols = out;
    }
}

impl TokenizerModel {
    /// Train on the raw contents of `corpus_path`.
    pub fn train_file(corpus_path: impl AsRef<Path>, vocab_size: usize) -> Result<Self> {
        let path = corpus_path.as_ref();
        if vocab_size < MIN_VOCAB {
            return Err(Error::VocabTooSmall {
                requested: vocab_size,
                minimum: MIN_VOCAB,
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::train(std::iter::once(bytes.as_slice()), vocab_size)
    }

    /// Learn `vocab_size - 259` merges from the given texts. Ties between
    /// equally frequent pairs go to the smallest `(left, right)` id pair, so
    /// training is deterministic.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a [u8]>, vocab_size: usize) -> Result<Self> {
        if vocab_size < MIN_VOCAB {
            return Err(Error::VocabTooSmall {
                requested: vocab_size,
                minimum: MIN_VOCAB,
            });
        }
        let mut counts: BTreeMap<&[u8], i64> = BTreeMap::new();
        for text in texts {
            for chunk in chunks(text) {
                *counts.entry(chunk).or_default() += 1;
            }
        }
        let mut words: Vec<Word> = counts
            .into_iter()
            .map(|(bytes, count)| Word {
                symbols: bytes.iter().map(|&b| b as u32).collect(),
                count,
            })
            .collect();

        let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
        let mut occurs_in: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
        for (idx, word) in words.iter().enumerate() {
            for pair in word.pairs() {
                *pair_counts.entry(pair).or_default() += word.count;
                occurs_in.entry(pair).or_default().insert(idx);
            }
        }
        let mut heap: BinaryHeap<(i64, Reverse<(u32, u32)>)> = pair_counts
            .iter()
            .map(|(&pair, &count)| (count, Reverse(pair)))
            .collect();

        let wanted = vocab_size - MIN_VOCAB;
        let mut merges = Vec::with_capacity(wanted);
        while merges.len() < wanted {
            let Some((count, Reverse(pair))) = heap.pop() else {
                break;
            };
            if pair_counts.get(&pair).copied().unwrap_or(0) != count || count <= 0 {
                continue; // stale
            }
            let new_id = (BYTE_SYMBOLS + merges.len()) as u32;
            merges.push(pair);

            let mut affected: Vec<usize> = occurs_in.remove(&pair).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            let mut touched: HashSet<(u32, u32)> = HashSet::new();
            for idx in affected {
                let word = &mut words[idx];
                for p in word.symbols.windows(2).map(|w| (w[0], w[1])) {
                    *pair_counts.get_mut(&p).expect("pair counted") -= word.count;
                    touched.insert(p);
                }
                word.merge(pair, new_id);
                for p in word.symbols.windows(2).map(|w| (w[0], w[1])) {
                    *pair_counts.entry(p).or_default() += word.count;
                    occurs_in.entry(p).or_default().insert(idx);
                    touched.insert(p);
                }
            }
            pair_counts.remove(&pair);
            let mut touched: Vec<_> = touched.into_iter().collect();
            touched.sort_unstable();
            for p in touched {
                if let Some(&c) = pair_counts.get(&p) {
                    if c > 0 {
                        heap.push((c, Reverse(p)));
                    }
                }
            }
        }
        if merges.len() < wanted {
            return Err(Error::CorpusTooSmall {
                found: merges.len(),
                wanted,
            });
        }
        Ok(Self::from_merges(merges))
    }

    /// Build a model from merges in priority order.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut vocab: Vec<Vec<u8>> = (0..BYTE_SYMBOLS).map(|b| vec![b as u8]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let mut bytes = vocab[a as usize].clone();
            bytes.extend_from_slice(&vocab[b as usize]);
            vocab.push(bytes);
            ranks.insert((a, b), rank as u32);
        }
        let specials = SpecialTokens::at_end(vocab.len() + NUM_SPECIALS);
        TokenizerModel {
            merges,
            vocab,
            ranks,
            specials,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + NUM_SPECIALS
    }

    pub fn specials(&self) -> SpecialTokens {
        self.specials
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes of a non-special token.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len());
        for chunk in chunks(bytes) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            let new_id = BYTE_SYMBOLS as u32 + rank;
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = merged;
        }
        out.extend_from_slice(&symbols);
    }

    /// Decode to raw bytes. Special ids are rejected.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.token_bytes(id).ok_or(Error::UnknownToken(id))?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Decode to text, replacing invalid UTF-8 sequences.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "vocab_size {}", self.vocab_size());
        let _ = writeln!(s, "special mask {}", self.specials.mask);
        let _ = writeln!(s, "special eos {}", self.specials.eos);
        let _ = writeln!(s, "special pad {}", self.specials.pad);
        let _ = writeln!(s, "[vocab]");
        for (id, bytes) in self.vocab.iter().enumerate() {
            let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(s, "{id} {hex}");
        }
        let _ = writeln!(s, "[merges]");
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: &str| Error::TokenizerFormat {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, FORMAT_HEADER)) => {}
            _ => return Err(err(1, "missing header")),
        }
        let mut vocab_size = None;
        let mut specials = [None; 3];
        let mut vocab_lines = Vec::new();
        let mut merges = Vec::new();
        let mut section = "";
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "[vocab]" || line == "[merges]" {
                section = if line == "[vocab]" { "vocab" } else { "merges" };
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u32>().map_err(|_| err(no, "expected an integer"));
            match (section, fields.as_slice()) {
                ("", ["vocab_size", n]) => vocab_size = Some(num(n)? as usize),
                ("", ["special", name, id]) => {
                    let slot = match *name {
                        "mask" => 0,
                        "eos" => 1,
                        "pad" => 2,
                        _ => return Err(err(no, "unknown special")),
                    };
                    specials[slot] = Some(num(id)?);
                }
                ("vocab", [id, hex]) => vocab_lines.push((no, num(id)?, hex.to_string())),
                ("merges", [a, b]) => merges.push((num(a)?, num(b)?)),
                _ => return Err(err(no, "unexpected line")),
            }
        }
        for (i, &(a, b)) in merges.iter().enumerate() {
            let limit = (BYTE_SYMBOLS + i) as u32;
            if a >= limit || b >= limit {
                return Err(err(0, &format!("merge {i} refers to a later token")));
            }
        }
        let model = Self::from_merges(merges);
        if vocab_size != Some(model.vocab_size()) {
            return Err(err(0, "vocab_size does not match merge count"));
        }
        let expected = model.specials;
        if specials != [Some(expected.mask), Some(expected.eos), Some(expected.pad)] {
            return Err(err(0, "special ids must be the last three ids"));
        }
        if vocab_lines.len() != model.vocab.len() {
            return Err(err(0, "vocab entry count mismatch"));
        }
        for (no, id, hex) in vocab_lines {
            let bytes = decode_hex(&hex).ok_or_else(|| err(no, "bad hex"))?;
            if model.vocab.get(id as usize) != Some(&bytes) {
                return Err(err(no, "vocab entry disagrees with merges"));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn decode_hex(hex: &str) -> Option<Vec<u8>> {
    if hex.len() % 2 != 0 {
        return None;
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(hex.get(i..i + 2)?, 16).ok())
        .collect()
}
