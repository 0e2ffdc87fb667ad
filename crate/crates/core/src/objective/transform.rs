//! The mask-and-move transformation.
//!
//! Starting from a document, selected tokens are replaced by MASK and moved,
//! together with their original positions, behind the unmasked tokens. Loss
//! targets are fixed in original-document space before the move: a slot
//! holding original position `p` predicts the token at `p + 1` (even when
//! that token was itself masked), and a masked slot predicts its own token.
//! Only the last `n_predict` slots keep their targets.

use serde::{Deserialize, Serialize};

use super::attention::AttentionSpec;
use crate::data::Document;
use crate::error::{Error, Result};

/// Sampled per-document parameters. Positions are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformPlan {
    pub n: usize,
    pub mask_positions: Vec<usize>,
    pub n_bidir: usize,
    pub n_predict: usize,
}

impl TransformPlan {
    pub fn new(n: usize, mask_positions: Vec<usize>, n_bidir: usize, n_predict: usize) -> Result<Self> {
        let plan = TransformPlan {
            n,
            mask_positions,
            n_bidir,
            n_predict,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plain next-token prediction over the whole document.
    pub fn causal(n: usize) -> Self {
        TransformPlan {
            n,
            mask_positions: Vec::new(),
            n_bidir: 0,
            n_predict: n,
        }
    }

    pub fn n_mask(&self) -> usize {
        self.mask_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        let n = self.n;
        if n < 2 {
            return Err(Error::DocumentTooShort(n));
        }
        for w in self.mask_positions.windows(2) {
            if w[0] >= w[1] {
                return bad("mask positions must be strictly increasing".into());
            }
        }
        if let (Some(&first), Some(&last)) = (self.mask_positions.first(), self.mask_positions.last()) {
            if first < 1 || last >= n {
                return bad(format!("mask positions must lie in 1..{n} (EOS is never masked)"));
            }
        }
        let n_mask = self.n_mask();
        if self.n_bidir > n {
            return bad(format!("n_bidir {} > n {n}", self.n_bidir));
        }
        if self.n_predict < n_mask || self.n_predict > n {
            return bad(format!("n_predict {} outside [{n_mask}, {n}]", self.n_predict));
        }
        if self.n_predict > n - self.n_bidir + n_mask {
            return bad(format!(
                "n_predict {} > n - n_bidir + n_mask = {}",
                self.n_predict,
                n - self.n_bidir + n_mask
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    Next,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub token: u32,
    pub kind: TargetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub input: u32,
    /// 1-based position in the original document.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedExample {
    pub slots: Vec<Slot>,
    /// One entry per slot; `None` outside the loss window and on window slots
    /// without a successor.
    pub targets: Vec<Option<Target>>,
    pub n_mask: usize,
    pub n_bidir: usize,
    pub n_predict: usize,
}

impl TransformedExample {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// First slot (1-based) of the loss window.
    pub fn window_start(&self) -> usize {
        self.len() - self.n_predict + 1
    }

    pub fn attention_spec(&self) -> AttentionSpec {
        AttentionSpec::single(self.len(), self.n_bidir)
    }

    /// `(next_count, mask_count)` of valid loss slots.
    pub fn count_loss_slots(&self) -> (usize, usize) {
        self.targets.iter().flatten().fold((0, 0), |(n, m), t| match t.kind {
            TargetKind::Next => (n + 1, m),
            TargetKind::Mask => (n, m + 1),
        })
    }

    /// Undo the move: sort slots by original position and restore masked
    /// tokens from their targets.
    pub fn reconstruct(&self, mask_id: u32) -> Vec<u32> {
        let mut out = vec![0u32; self.len()];
        for (slot, target) in self.slots.iter().zip(&self.targets) {
            out[slot.position - 1] = if slot.input == mask_id {
                match target {
                    Some(Target {
                        token,
                        kind: TargetKind::Mask,
                    }) => *token,
                    _ => mask_id,
                }
            } else {
                slot.input
            };
        }
        out
    }
}

pub fn transform(doc: &Document, plan: &TransformPlan, mask_id: u32) -> Result<TransformedExample> {
    let n = doc.len();
    if plan.n != n {
        return Err(Error::PlanLengthMismatch { plan: plan.n, doc: n });
    }
    plan.validate()?;

    let mut is_masked = vec![false; n + 1];
    for &p in &plan.mask_positions {
        is_masked[p] = true;
    }
    let mut slots = Vec::with_capacity(n);
    slots.extend((1..=n).filter(|&p| !is_masked[p]).map(|p| Slot {
        input: doc.at(p),
        position: p,
    }));
    slots.extend(plan.mask_positions.iter().map(|&p| Slot {
        input: mask_id,
        position: p,
    }));

    let n_mask = plan.n_mask();
    let window_start = n - plan.n_predict + 1;
    let targets = slots
        .iter()
        .enumerate()
        .map(|(idx, slot)| {
            let k = idx + 1;
            if k < window_start {
                None
            } else if k > n - n_mask {
                Some(Target {
                    token: doc.at(slot.position),
                    kind: TargetKind::Mask,
                })
            } else if slot.position < n {
                Some(Target {
                    token: doc.at(slot.position + 1),
                    kind: TargetKind::Next,
                })
            } else {
                None
            }
        })
        .collect();

    Ok(TransformedExample {
        slots,
        targets,
        n_mask,
        n_bidir: plan.n_bidir,
        n_predict: plan.n_predict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EOS: u32 = 1;
    const MASK: u32 = 99;

    fn doc() -> Document {
        Document::new(vec![5, 9, 2, 7, 4, EOS], EOS, "trace").unwrap()
    }

    fn next(token: u32) -> Option<Target> {
        Some(Target {
            token,
            kind: TargetKind::Next,
        })
    }

    fn mask(token: u32) -> Option<Target> {
        Some(Target {
            token,
            kind: TargetKind::Mask,
        })
    }

    #[test]
    fn hybuni_trace() {
        let plan = TransformPlan::new(6, vec![2, 4], 0, 6).unwrap();
        let ex = transform(&doc(), &plan, MASK).unwrap();
        let inputs: Vec<u32> = ex.slots.iter().map(|s| s.input).collect();
        let positions: Vec<usize> = ex.slots.iter().map(|s| s.position).collect();
        assert_eq!(inputs, vec![5, 2, 4, EOS, MASK, MASK]);
        assert_eq!(positions, vec![1, 3, 5, 6, 2, 4]);
        assert_eq!(ex.targets, vec![next(9), next(7), next(EOS), None, mask(9), mask(7)]);
        assert_eq!(ex.count_loss_slots(), (3, 2));
    }

    #[test]
    fn mskbi_trace() {
        let plan = TransformPlan::new(6, vec![2, 4], 6, 2).unwrap();
        let ex = transform(&doc(), &plan, MASK).unwrap();
        let positions: Vec<usize> = ex.slots.iter().map(|s| s.position).collect();
        assert_eq!(positions, vec![1, 3, 5, 6, 2, 4]);
        assert_eq!(ex.targets, vec![None, None, None, None, mask(9), mask(7)]);
        assert_eq!(ex.count_loss_slots(), (0, 2));
    }

    #[test]
    fn nxtuni_is_identity_layout() {
        let ex = transform(&doc(), &TransformPlan::causal(6), MASK).unwrap();
        let positions: Vec<usize> = ex.slots.iter().map(|s| s.position).collect();
        assert_eq!(positions, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(ex.targets, vec![next(9), next(2), next(7), next(4), next(EOS), None]);
        assert_eq!(ex.count_loss_slots(), (5, 0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let plan = TransformPlan::causal(5);
        assert!(matches!(
            transform(&doc(), &plan, MASK),
            Err(Error::PlanLengthMismatch { plan: 5, doc: 6 })
        ));
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(TransformPlan::new(6, vec![6], 0, 6).is_err()); // EOS
        assert!(TransformPlan::new(6, vec![3, 2], 0, 6).is_err());
        assert!(TransformPlan::new(6, vec![2], 0, 0).is_err()); // n_predict < n_mask
        assert!(TransformPlan::new(6, vec![], 3, 4).is_err()); // window exceeds the non-prefix slots plus masks
        assert!(TransformPlan::new(6, vec![], 7, 0).is_err());
    }

    #[test]
    fn reconstruct_inverts_the_move() {
        let plan = TransformPlan::new(6, vec![2, 4], 0, 6).unwrap();
        let ex = transform(&doc(), &plan, MASK).unwrap();
        assert_eq!(ex.reconstruct(MASK), doc().tokens());
    }
}
