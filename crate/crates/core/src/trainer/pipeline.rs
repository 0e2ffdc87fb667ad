//! Epoch-shuffled stream of packed training batches.
//!
//! Every visit to a document draws a fresh plan from the "masks" substream;
//! epoch order comes from the "data" substream. A document that would spill
//! into an extra row is put back (cursor and mask stream restored), so the
//! stream state after any batch fully determines every later batch.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Document, SpecialTokens};
use crate::error::{Error, Result};
use crate::objective::{sample_plan, transform, PackedBatch, PackedSequence, Packer, VariantSpec};
use crate::seed::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub epoch: u64,
    pub cursor: usize,
    pub order: Vec<u32>,
    pub data_rng: ChaCha8Rng,
    pub mask_rng: ChaCha8Rng,
}

pub struct BatchStream<'d> {
    docs: &'d [Document],
    spec: VariantSpec,
    max_len: usize,
    num_seqs: usize,
    pack: bool,
    specials: SpecialTokens,
    state: StreamState,
}

impl<'d> BatchStream<'d> {
    /// Documents must already fit in `max_len`.
    pub fn new(
        docs: &'d [Document],
        spec: VariantSpec,
        max_len: usize,
        num_seqs: usize,
        pack: bool,
        specials: SpecialTokens,
        seed: u64,
    ) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if let Some(d) = docs.iter().find(|d| d.len() > max_len) {
            return Err(Error::ExampleTooLong { len: d.len(), max_len });
        }
        if num_seqs == 0 {
            return Err(Error::InvalidTrainConfig("batch holds no sequences".into()));
        }
        Ok(BatchStream {
            docs,
            spec,
            max_len,
            num_seqs,
            pack,
            specials,
            state: StreamState {
                epoch: 0,
                cursor: docs.len(),
                order: (0..docs.len() as u32).collect(),
                data_rng: substream(seed, "data"),
                mask_rng: substream(seed, "masks"),
            },
        })
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn restore(&mut self, state: StreamState) -> Result<()> {
        if state.order.len() != self.docs.len() || state.cursor > self.docs.len() {
            return Err(Error::Checkpoint("stream state does not match the corpus".into()));
        }
        self.state = state;
        Ok(())
    }

    fn current_doc(&mut self) -> &'d Document {
        let st = &mut self.state;
        if st.cursor == st.order.len() {
            st.order.shuffle(&mut st.data_rng);
            st.cursor = 0;
            st.epoch += 1;
        }
        &self.docs[st.order[st.cursor] as usize]
    }

    pub fn next_batch(&mut self) -> Result<PackedBatch> {
        let (mask, pad) = (self.specials.mask, self.specials.pad);
        let mut rows: Vec<PackedSequence> = Vec::with_capacity(self.num_seqs);
        let mut packer = Packer::new(self.max_len, pad);
        loop {
            let doc = self.current_doc();
            let saved = self.state.mask_rng.clone();
            let plan = sample_plan(&self.spec, doc.len(), &mut self.state.mask_rng)?;
            let ex = transform(doc, &plan, mask)?;
            if self.pack {
                if packer.is_open() && !packer.fits(ex.len()) && rows.len() + 1 == self.num_seqs {
                    self.state.mask_rng = saved;
                    break;
                }
                rows.extend(packer.push(&ex)?);
                self.state.cursor += 1;
            } else {
                rows.push(PackedSequence::from_example(&ex, self.max_len, pad)?);
                self.state.cursor += 1;
                if rows.len() == self.num_seqs {
                    break;
                }
            }
        }
        rows.extend(packer.finish());
        PackedBatch::new(self.max_len, rows)
    }
}
