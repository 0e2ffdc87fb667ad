//! Greedy packing of transformed documents into fixed-length sequences.

use serde::{Deserialize, Serialize};

use super::attention::{AttentionSpec, DocSpan};
use super::transform::{TargetKind, TransformedExample};
use crate::error::{Error, Result};

/// One fixed-length row. All vectors have length `len()`; position ids are
/// 1-based indices into the packed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub input_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub target_kinds: Vec<Option<TargetKind>>,
    pub valid: Vec<bool>,
    pub attention: AttentionSpec,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    fn empty(max_len: usize) -> Self {
        PackedSequence {
            input_ids: Vec::with_capacity(max_len),
            position_ids: Vec::with_capacity(max_len),
            target_ids: Vec::with_capacity(max_len),
            target_kinds: Vec::with_capacity(max_len),
            valid: Vec::with_capacity(max_len),
            attention: AttentionSpec {
                len: max_len,
                docs: Vec::new(),
            },
        }
    }

    fn push_example(&mut self, ex: &TransformedExample) {
        let offset = self.input_ids.len();
        for (slot, target) in ex.slots.iter().zip(&ex.targets) {
            self.input_ids.push(slot.input);
            self.position_ids.push((offset + slot.position) as u32);
            self.target_ids.push(target.map_or(0, |t| t.token));
            self.target_kinds.push(target.map(|t| t.kind));
            self.valid.push(target.is_some());
        }
        self.attention.docs.push(DocSpan {
            start: offset + 1,
            end: offset + ex.len(),
            n_bidir: ex.n_bidir,
        });
    }

    fn pad_to(&mut self, max_len: usize, pad_id: u32) {
        while self.input_ids.len() < max_len {
            let slot = self.input_ids.len() + 1;
            self.input_ids.push(pad_id);
            self.position_ids.push(slot as u32);
            self.target_ids.push(0);
            self.target_kinds.push(None);
            self.valid.push(false);
        }
    }

    /// A sequence holding a single example padded to `max_len`.
    pub fn from_example(ex: &TransformedExample, max_len: usize, pad_id: u32) -> Result<Self> {
        if ex.len() > max_len {
            return Err(Error::ExampleTooLong {
                len: ex.len(),
                max_len,
            });
        }
        let mut seq = Self::empty(max_len);
        seq.push_example(ex);
        seq.pad_to(max_len, pad_id);
        Ok(seq)
    }

    pub fn num_targets(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// A group of equal-length sequences forming one step's input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedBatch {
    pub max_len: usize,
    pub sequences: Vec<PackedSequence>,
}

impl PackedBatch {
    pub fn new(max_len: usize, sequences: Vec<PackedSequence>) -> Result<Self> {
        for s in &sequences {
            if s.len() != max_len || s.attention.len != max_len {
                return Err(Error::BatchRecord(format!(
                    "sequence of length {} in batch of max_len {max_len}",
                    s.len()
                )));
            }
            s.attention.validate()?;
        }
        Ok(PackedBatch { max_len, sequences })
    }

    /// Each example in its own row, padded to the longest one.
    pub fn one_per_row(examples: &[TransformedExample], pad_id: u32) -> Result<Self> {
        let max_len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
        let sequences = examples
            .iter()
            .map(|e| PackedSequence::from_example(e, max_len, pad_id))
            .collect::<Result<_>>()?;
        Ok(PackedBatch { max_len, sequences })
    }

    pub fn num_slots(&self) -> usize {
        self.max_len * self.sequences.len()
    }

    pub fn num_targets(&self) -> usize {
        self.sequences.iter().map(PackedSequence::num_targets).sum()
    }
}

/// Streaming greedy packer: an example starts a new sequence when it does
/// not fit in the current one.
pub struct Packer {
    max_len: usize,
    pad_id: u32,
    current: Option<PackedSequence>,
}

impl Packer {
    pub fn new(max_len: usize, pad_id: u32) -> Self {
        Packer {
            max_len,
            pad_id,
            current: None,
        }
    }

    /// Whether `len` more slots fit in the open sequence.
    pub fn fits(&self, len: usize) -> bool {
        self.current
            .as_ref()
            .is_some_and(|c| c.input_ids.len() + len <= self.max_len)
    }

    pub fn is_open(&self) -> bool {
        self.current.is_some()
    }

    /// Add an example; returns a completed sequence when the example had to
    /// open a new one.
    pub fn push(&mut self, ex: &TransformedExample) -> Result<Option<PackedSequence>> {
        if ex.len() > self.max_len {
            return Err(Error::ExampleTooLong {
                len: ex.len(),
                max_len: self.max_len,
            });
        }
        let done = if self.fits(ex.len()) { None } else { self.finish() };
        self.current
            .get_or_insert_with(|| PackedSequence::empty(self.max_len))
            .push_example(ex);
        Ok(done)
    }

    /// Close and pad the open sequence.
    pub fn finish(&mut self) -> Option<PackedSequence> {
        let mut seq = self.current.take()?;
        seq.pad_to(self.max_len, self.pad_id);
        Some(seq)
    }
}

pub fn pack<'a>(
    examples: impl IntoIterator<Item = &'a TransformedExample>,
    max_len: usize,
    pad_id: u32,
) -> Result<Vec<PackedSequence>> {
    let mut packer = Packer::new(max_len, pad_id);
    let mut out = Vec::new();
    for ex in examples {
        out.extend(packer.push(ex)?);
    }
    out.extend(packer.finish());
    Ok(out)
}
