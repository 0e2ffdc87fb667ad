//! Binary record of packed batches.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "BDLMPACK"
//! version      u16      = 1
//! num_batches  u32
//! per batch:
//!   max_len    u32
//!   num_seqs   u32
//!   per sequence:
//!     num_docs u32, then num_docs x (start u32, end u32, n_bidir u32)
//!     input_ids     max_len x u32
//!     position_ids  max_len x u32
//!     target_ids    max_len x u32
//!     target_kinds  max_len x u8   (0 none, 1 next, 2 mask)
//! ```
//!
//! A slot is a valid loss slot exactly when its kind is non-zero.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::attention::{AttentionSpec, DocSpan};
use super::pack::{PackedBatch, PackedSequence};
use super::transform::TargetKind;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BDLMPACK";
pub const VERSION: u16 = 1;

pub fn write_batches<W: Write>(mut w: W, batches: &[PackedBatch]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u32::<LE>(batches.len() as u32)?;
    for batch in batches {
        w.write_u32::<LE>(batch.max_len as u32)?;
        w.write_u32::<LE>(batch.sequences.len() as u32)?;
        for seq in &batch.sequences {
            w.write_u32::<LE>(seq.attention.docs.len() as u32)?;
            for d in &seq.attention.docs {
                w.write_u32::<LE>(d.start as u32)?;
                w.write_u32::<LE>(d.end as u32)?;
                w.write_u32::<LE>(d.n_bidir as u32)?;
            }
            for column in [&seq.input_ids, &seq.position_ids, &seq.target_ids] {
                for &v in column {
                    w.write_u32::<LE>(v)?;
                }
            }
            for kind in &seq.target_kinds {
                w.write_u8(match kind {
                    None => 0,
                    Some(TargetKind::Next) => 1,
                    Some(TargetKind::Mask) => 2,
                })?;
            }
        }
    }
    Ok(())
}

pub fn read_batches<R: Read>(mut r: R) -> Result<Vec<PackedBatch>> {
    let bad = |m: &str| Error::BatchRecord(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u16::<LE>()?;
    if version != VERSION {
        return Err(Error::BatchRecord(format!("unsupported version {version}")));
    }
    let num_batches = r.read_u32::<LE>()? as usize;
    let mut batches = Vec::with_capacity(num_batches.min(1 << 16));
    for _ in 0..num_batches {
        let max_len = r.read_u32::<LE>()? as usize;
        let num_seqs = r.read_u32::<LE>()? as usize;
        let mut sequences = Vec::with_capacity(num_seqs.min(1 << 16));
        for _ in 0..num_seqs {
            let num_docs = r.read_u32::<LE>()? as usize;
            let mut docs = Vec::with_capacity(num_docs.min(max_len));
            for _ in 0..num_docs {
                docs.push(DocSpan {
                    start: r.read_u32::<LE>()? as usize,
                    end: r.read_u32::<LE>()? as usize,
                    n_bidir: r.read_u32::<LE>()? as usize,
                });
            }
            let mut column = || -> Result<Vec<u32>> {
                (0..max_len).map(|_| Ok(r.read_u32::<LE>()?)).collect()
            };
            let input_ids = column()?;
            let position_ids = column()?;
            let target_ids = column()?;
            let target_kinds = (0..max_len)
                .map(|_| match r.read_u8()? {
                    0 => Ok(None),
                    1 => Ok(Some(TargetKind::Next)),
                    2 => Ok(Some(TargetKind::Mask)),
                    k => Err(Error::BatchRecord(format!("bad target kind {k}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let valid = target_kinds.iter().map(Option::is_some).collect();
            sequences.push(PackedSequence {
                input_ids,
                position_ids,
                target_ids,
                target_kinds,
                valid,
                attention: AttentionSpec::new(max_len, docs)?,
            });
        }
        batches.push(PackedBatch::new(max_len, sequences)?);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Document;
    use crate::objective::pack::pack;
    use crate::objective::transform::{transform, TransformPlan};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn batches_survive_a_round_trip(
            lens in proptest::collection::vec(2usize..12, 1..8),
            mask_bits in proptest::collection::vec(any::<bool>(), 96),
            bidir in 0usize..12,
        ) {
            let mut bits = mask_bits.into_iter().cycle();
            let examples: Vec<_> = lens
                .iter()
                .map(|&n| {
                    let mut tokens: Vec<u32> = (0..n as u32 - 1).map(|t| t + 3).collect();
                    tokens.push(1);
                    let doc = Document::new(tokens, 1, "p").unwrap();
                    let masks: Vec<usize> = (1..n).filter(|_| bits.next().unwrap()).collect();
                    let n_bidir = bidir.min(n);
                    let n_predict = (n - n_bidir + masks.len()).min(n);
                    let plan = TransformPlan::new(n, masks, n_bidir, n_predict).unwrap();
                    transform(&doc, &plan, 2).unwrap()
                })
                .collect();
            let seqs = pack(&examples, 16, 0).unwrap();
            let batch = PackedBatch::new(16, seqs).unwrap();
            let mut buf = Vec::new();
            write_batches(&mut buf, std::slice::from_ref(&batch)).unwrap();
            let back = read_batches(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![batch]);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(read_batches(&b"NOTMAGIC\x01\x00\x00\x00\x00\x00"[..]).is_err());
    }
}
