//! Forward pass, loss and gradients for packed batches.

use ndarray::Array2;

use super::params::{block, Params, POS_EMB, TOK_EMB};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::objective::{PackedBatch, TargetKind};
use crate::scalar::Scalar;

/// A recorded forward pass up to the final layer norm.
pub struct Graph<'p, T: Scalar> {
    pub tape: Tape<'p, T>,
    /// One leaf per parameter tensor, in parameter order.
    pub params: Vec<Var>,
    /// Final hidden states, `[sequences * max_len, d]`, row-major by slot.
    pub hidden: Var,
}

impl<T: Scalar> Graph<'_, T> {
    /// Gradients for every parameter tensor; zeros where the loss does not reach.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Array2<T>> {
        self.params
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Array2::zeros(self.tape.value(v).dim())))
            .collect()
    }
}

/// Mean NLL over valid slots, split by target kind.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub loss_next: Option<f64>,
    pub loss_mask: Option<f64>,
    pub num_next: usize,
    pub num_mask: usize,
    /// Per sequence, per slot NLL (`None` where the slot has no target).
    pub per_slot: Vec<Vec<Option<f64>>>,
}

impl<T: Scalar> Params<T> {
    fn check_batch(&self, batch: &PackedBatch) -> Result<()> {
        let c = &self.config;
        for seq in &batch.sequences {
            for (&id, &pos) in seq.input_ids.iter().zip(&seq.position_ids) {
                if id as usize >= c.vocab_size {
                    return Err(Error::TokenOutOfVocab { id, vocab_size: c.vocab_size });
                }
                if pos == 0 || pos as usize > c.max_positions {
                    return Err(Error::PositionOverflow {
                        position: pos as usize,
                        max_positions: c.max_positions,
                    });
                }
            }
        }
        Ok(())
    }

    /// Record the transformer over `batch`.
    pub fn graph<'p>(&'p self, batch: &PackedBatch) -> Result<Graph<'p, T>> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let params: Vec<Var> = self.tensors.iter().map(|t| tape.param(t)).collect();
        let ids: Vec<usize> = batch
            .sequences
            .iter()
            .flat_map(|s| s.input_ids.iter().map(|&t| t as usize))
            .collect();
        let positions: Vec<usize> = batch
            .sequences
            .iter()
            .flat_map(|s| s.position_ids.iter().map(|&p| p as usize - 1))
            .collect();
        let masks: Vec<_> = batch.sequences.iter().map(|s| s.attention.mask()).collect();

        let tok = tape.gather(params[TOK_EMB], ids);
        let pos = tape.gather(params[POS_EMB], positions);
        let mut x = tape.add(tok, pos);
        for layer in 0..self.config.layers {
            let p = |offset| params[self.block_index(layer, offset)];
            let h = tape.layer_norm(x, p(block::LN1_G), p(block::LN1_B));
            let qkv = tape.linear(h, p(block::QKV_W), p(block::QKV_B));
            let a = tape.attention(qkv, self.config.heads, batch.max_len, masks.clone());
            let o = tape.linear(a, p(block::OUT_W), p(block::OUT_B));
            x = tape.add(x, o);
            let h = tape.layer_norm(x, p(block::LN2_G), p(block::LN2_B));
            let f = tape.linear(h, p(block::FC_W), p(block::FC_B));
            let f = tape.gelu(f);
            let f = tape.linear(f, p(block::PROJ_W), p(block::PROJ_B));
            x = tape.add(x, f);
        }
        let fin = self.final_norm_index();
        let hidden = tape.layer_norm(x, params[fin], params[fin + 1]);
        Ok(Graph { tape, params, hidden })
    }

    /// Final hidden states for every slot.
    pub fn hidden(&self, batch: &PackedBatch) -> Result<Array2<T>> {
        let g = self.graph(batch)?;
        Ok(g.tape.value(g.hidden).clone())
    }

    /// Vocabulary logits for every slot, `[sequences * max_len, V]`.
    pub fn forward(&self, batch: &PackedBatch) -> Result<Array2<T>> {
        let h = self.hidden(batch)?;
        Ok(h.dot(&self.tensors[TOK_EMB].t()))
    }

    /// Logits only at the given flat slot rows.
    pub fn logits_at(&self, batch: &PackedBatch, rows: &[usize]) -> Result<Array2<T>> {
        let h = self.hidden(batch)?;
        let sel = h.select(ndarray::Axis(0), rows);
        Ok(sel.dot(&self.tensors[TOK_EMB].t()))
    }

    fn loss_graph<'p>(&'p self, batch: &PackedBatch) -> Result<(Graph<'p, T>, Var, LossReport)> {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut kinds = Vec::new();
        for (s, seq) in batch.sequences.iter().enumerate() {
            for k in 0..seq.len() {
                if let (true, Some(kind)) = (seq.valid[k], seq.target_kinds[k]) {
                    let t = seq.target_ids[k] as usize;
                    if t >= self.config.vocab_size {
                        return Err(Error::TokenOutOfVocab {
                            id: t as u32,
                            vocab_size: self.config.vocab_size,
                        });
                    }
                    rows.push(s * batch.max_len + k);
                    targets.push(Some(t));
                    kinds.push(kind);
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::NoTargets);
        }
        let mut g = self.graph(batch)?;
        let sel = g.tape.gather(g.hidden, rows.clone());
        let logits = g.tape.matmul_t(sel, g.params[TOK_EMB]);
        let (loss, nll) = g.tape.cross_entropy(logits, &targets);

        let mut per_slot = vec![vec![None; batch.max_len]; batch.sequences.len()];
        let (mut sum_next, mut sum_mask, mut num_next, mut num_mask) = (0.0, 0.0, 0, 0);
        for ((&row, kind), v) in rows.iter().zip(&kinds).zip(&nll) {
            let v = v.expect("every selected row has a target");
            per_slot[row / batch.max_len][row % batch.max_len] = Some(v);
            match kind {
                TargetKind::Next => {
                    sum_next += v;
                    num_next += 1;
                }
                TargetKind::Mask => {
                    sum_mask += v;
                    num_mask += 1;
                }
            }
        }
        let report = LossReport {
            loss: g.tape.value(loss)[[0, 0]].as_f64(),
            loss_next: (num_next > 0).then(|| sum_next / num_next as f64),
            loss_mask: (num_mask > 0).then(|| sum_mask / num_mask as f64),
            num_next,
            num_mask,
            per_slot,
        };
        Ok((g, loss, report))
    }

    /// Mean NLL over valid target slots.
    pub fn loss(&self, batch: &PackedBatch) -> Result<LossReport> {
        Ok(self.loss_graph(batch)?.2)
    }

    /// Loss together with the gradient for every parameter tensor.
    pub fn loss_and_grad(&self, batch: &PackedBatch) -> Result<(LossReport, Vec<Array2<T>>)> {
        let (g, loss, report) = self.loss_graph(batch)?;
        let mut grads = g.tape.backward(loss);
        Ok((report, g.param_grads(&mut grads)))
    }
}
