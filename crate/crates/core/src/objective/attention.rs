//! Attention predicate over packed sequences.
//!
//! Within a document (local slots `i`, `j`) slot `i` may attend slot `j`
//! iff `j <= max(i, n_bidir)`. Across documents, a slot may attend every
//! slot of earlier documents and none of later ones. PAD slots neither
//! attend nor are attended.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A document's span of slots, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpan {
    pub start: usize,
    pub end: usize,
    pub n_bidir: usize,
}

impl DocSpan {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    /// Total slots, including trailing PAD.
    pub len: usize,
    pub docs: Vec<DocSpan>,
}

impl AttentionSpec {
    pub fn single(n: usize, n_bidir: usize) -> Self {
        AttentionSpec {
            len: n,
            docs: vec![DocSpan {
                start: 1,
                end: n,
                n_bidir,
            }],
        }
    }

    /// Spans must be contiguous from slot 1; slots after the last span are PAD.
    pub fn new(len: usize, docs: Vec<DocSpan>) -> Result<Self> {
        let spec = AttentionSpec { len, docs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut next = 1;
        for d in &self.docs {
            if d.start != next || d.end < d.start {
                return Err(Error::InvalidAttention(format!(
                    "span ({}, {}) does not continue at slot {next}",
                    d.start, d.end
                )));
            }
            if d.n_bidir > d.len() {
                return Err(Error::InvalidAttention(format!(
                    "n_bidir {} exceeds span length {}",
                    d.n_bidir,
                    d.len()
                )));
            }
            next = d.end + 1;
        }
        if next - 1 > self.len {
            return Err(Error::InvalidAttention(format!(
                "spans cover {} slots but the sequence has {}",
                next - 1,
                self.len
            )));
        }
        Ok(())
    }

    /// Number of non-PAD slots.
    pub fn content_len(&self) -> usize {
        self.docs.last().map_or(0, |d| d.end)
    }

    /// Index into `docs` of the document holding `slot`, if any.
    pub fn doc_of(&self, slot: usize) -> Option<usize> {
        let idx = self.docs.partition_point(|d| d.end < slot);
        (idx < self.docs.len() && self.docs[idx].start <= slot).then_some(idx)
    }

    /// Slot-by-slot evaluation of the predicate (1-based slots).
    pub fn allowed(&self, i: usize, j: usize) -> Result<bool> {
        if i == 0 || j == 0 || i > self.len || j > self.len {
            return Err(Error::SlotOutOfRange { i, j, len: self.len });
        }
        let (Some(di), Some(dj)) = (self.doc_of(i), self.doc_of(j)) else {
            return Ok(false);
        };
        Ok(match dj.cmp(&di) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => {
                let d = &self.docs[di];
                let (li, lj) = (i + 1 - d.start, j + 1 - d.start);
                lj <= li.max(d.n_bidir)
            }
        })
    }

    /// Build the full mask block by block.
    pub fn mask(&self) -> AttentionMask {
        let len = self.len;
        let mut allowed = vec![false; len * len];
        for d in &self.docs {
            for i in d.start..=d.end {
                let local = i + 1 - d.start;
                let visible_end = d.start - 1 + local.max(d.n_bidir);
                let row = &mut allowed[(i - 1) * len..i * len];
                row[..visible_end].fill(true);
            }
        }
        AttentionMask { len, allowed }
    }
}

/// Free-function form of [`AttentionSpec::allowed`].
pub fn attention_allowed(spec: &AttentionSpec, i: usize, j: usize) -> Result<bool> {
    spec.allowed(i, j)
}

/// Dense boolean mask, row-major, 0-based: `get(i, j)` is whether slot
/// `i + 1` attends slot `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.len + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.len..(i + 1) * self.len]
    }

    /// Every slot attends every slot.
    pub fn full(len: usize) -> Self {
        AttentionMask {
            len,
            allowed: vec![true; len * len],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(spec: &AttentionSpec) -> Vec<Vec<usize>> {
        (1..=spec.len)
            .map(|i| (1..=spec.len).filter(|&j| spec.allowed(i, j).unwrap()).collect())
            .collect()
    }

    #[test]
    fn prefix_of_two_in_four() {
        let spec = AttentionSpec::single(4, 2);
        assert_eq!(
            rows(&spec),
            vec![vec![1, 2], vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4]]
        );
    }

    #[test]
    fn zero_prefix_is_causal_and_full_prefix_is_dense() {
        let causal = AttentionSpec::single(5, 0);
        let dense = AttentionSpec::single(5, 5);
        for i in 1..=5 {
            for j in 1..=5 {
                assert_eq!(causal.allowed(i, j).unwrap(), j <= i);
                assert!(dense.allowed(i, j).unwrap());
            }
        }
    }

    #[test]
    fn packed_documents() {
        let spec = AttentionSpec::new(
            7,
            vec![
                DocSpan { start: 1, end: 3, n_bidir: 0 },
                DocSpan { start: 4, end: 6, n_bidir: 3 },
            ],
        )
        .unwrap();
        assert_eq!(rows(&spec)[3], vec![1, 2, 3, 4, 5, 6]);
        assert!((4..=6).all(|j| !spec.allowed(2, j).unwrap()));
        // PAD
        assert!((1..=7).all(|j| !spec.allowed(7, j).unwrap() && !spec.allowed(j, 7).unwrap()));
    }

    #[test]
    fn out_of_range_is_an_error() {
        let spec = AttentionSpec::single(3, 0);
        assert!(spec.allowed(0, 1).is_err());
        assert!(spec.allowed(1, 4).is_err());
    }

    #[test]
    fn spans_must_be_contiguous() {
        let gap = vec![
            DocSpan { start: 1, end: 2, n_bidir: 0 },
            DocSpan { start: 4, end: 5, n_bidir: 0 },
        ];
        assert!(AttentionSpec::new(6, gap).is_err());
        let too_long = vec![DocSpan { start: 1, end: 8, n_bidir: 0 }];
        assert!(AttentionSpec::new(6, too_long).is_err());
    }

    #[test]
    fn mask_builder_matches_predicate_exhaustively() {
        for n in 1..=16 {
            for nb in 0..=n {
                let spec = AttentionSpec::single(n, nb);
                let mask = spec.mask();
                for i in 1..=n {
                    for j in 1..=n {
                        assert_eq!(mask.get(i - 1, j - 1), j <= i.max(nb), "n={n} nb={nb} i={i} j={j}");
                    }
                }
            }
        }
    }
}
