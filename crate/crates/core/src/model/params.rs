//! Parameter storage, initialization and checkpoints.
//!
//! Tensors live in one flat list in a fixed order, which is also the order
//! used by gradients, optimizer moments and checkpoint files:
//!
//! ```text
//! 0                token embedding    [V, d]   (tied output projection)
//! 1                position embedding [P, d]   row p-1 for position p
//! 2 + 12b + 0..12  block b: ln1 gain, ln1 bias, qkv weight [d, 3d], qkv bias,
//!                  out weight [d, d], out bias, ln2 gain, ln2 bias,
//!                  fc weight [d, 4d], fc bias, proj weight [4d, d], proj bias
//! 2 + 12l + 0..2   final norm gain, final norm bias
//! 2 + 12l + 2..4   classification head weight [d, K], bias [1, K] (optional)
//! ```
//!
//! Every bias and norm parameter is a `[1, n]` row.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::seed::substream;

pub const INIT_STD: f64 = 0.02;
pub const PER_BLOCK: usize = 12;
pub const TOK_EMB: usize = 0;
pub const POS_EMB: usize = 1;

/// Offsets of a block's tensors relative to the block start.
pub mod block {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const QKV_W: usize = 2;
    pub const QKV_B: usize = 3;
    pub const OUT_W: usize = 4;
    pub const OUT_B: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const FC_W: usize = 8;
    pub const FC_B: usize = 9;
    pub const PROJ_W: usize = 10;
    pub const PROJ_B: usize = 11;
}

const BLOCK_NAMES: [&str; PER_BLOCK] = [
    "ln1.gain", "ln1.bias", "attn.qkv.weight", "attn.qkv.bias", "attn.out.weight", "attn.out.bias",
    "ln2.gain", "ln2.bias", "ffn.fc.weight", "ffn.fc.bias", "ffn.proj.weight", "ffn.proj.bias",
];

/// Coarse grouping of tensors, used to sample gradient checks per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorClass {
    Embedding,
    Attention,
    FeedForward,
    Norm,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: ModelConfig,
    pub tensors: Vec<Array2<T>>,
    num_labels: Option<usize>,
}

/// Header fields stored alongside the tensors in a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub step: u64,
    pub tokens: u64,
}

fn normal<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(dist.sample(rng)))
}

impl<T: Scalar> Params<T> {
    /// Normal(0, 0.02) weights, with the two residual projections of each
    /// block scaled by `1/sqrt(2l)`; zero biases and unit norm gains. Drawn
    /// from the "init" substream of `seed`, in tensor order.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "init");
        let (v, p, d) = (config.vocab_size, config.max_positions, config.d_model);
        let resid_std = INIT_STD / (2.0 * config.layers as f64).sqrt();
        let ones = || Array2::from_elem((1, d), T::one());
        let zeros = |n: usize| Array2::zeros((1, n));
        let mut tensors = vec![normal(v, d, INIT_STD, &mut rng), normal(p, d, INIT_STD, &mut rng)];
        for _ in 0..config.layers {
            tensors.push(ones());
            tensors.push(zeros(d));
            tensors.push(normal(d, 3 * d, INIT_STD, &mut rng));
            tensors.push(zeros(3 * d));
            tensors.push(normal(d, d, resid_std, &mut rng));
            tensors.push(zeros(d));
            tensors.push(ones());
            tensors.push(zeros(d));
            tensors.push(normal(d, 4 * d, INIT_STD, &mut rng));
            tensors.push(zeros(4 * d));
            tensors.push(normal(4 * d, d, resid_std, &mut rng));
            tensors.push(zeros(d));
        }
        tensors.push(ones());
        tensors.push(zeros(d));
        Ok(Params {
            config: config.clone(),
            tensors,
            num_labels: None,
        })
    }

    pub fn block_index(&self, layer: usize, offset: usize) -> usize {
        2 + layer * PER_BLOCK + offset
    }

    pub fn final_norm_index(&self) -> usize {
        2 + self.config.layers * PER_BLOCK
    }

    /// Indices of the head weight and bias, if a head is attached.
    pub fn head_indices(&self) -> Option<(usize, usize)> {
        self.num_labels.map(|_| (self.final_norm_index() + 2, self.final_norm_index() + 3))
    }

    pub fn num_labels(&self) -> Option<usize> {
        self.num_labels
    }

    /// Add a Normal(0, 0.02) linear head over the final hidden state.
    pub fn attach_head(&mut self, num_labels: usize, seed: u64) -> Result<()> {
        if self.num_labels.is_some() {
            return Err(Error::HeadAlreadyPresent);
        }
        if num_labels < 2 {
            return Err(Error::InvalidFinetune(format!("num_labels {num_labels} < 2")));
        }
        let mut rng = substream(seed, "head");
        let d = self.config.d_model;
        self.tensors.push(normal(d, num_labels, INIT_STD, &mut rng));
        self.tensors.push(Array2::zeros((1, num_labels)));
        self.num_labels = Some(num_labels);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn name(&self, index: usize) -> String {
        let fin = self.final_norm_index();
        match index {
            TOK_EMB => "tok_emb".into(),
            POS_EMB => "pos_emb".into(),
            i if i < fin => format!("blocks.{}.{}", (i - 2) / PER_BLOCK, BLOCK_NAMES[(i - 2) % PER_BLOCK]),
            i if i == fin => "ln_f.gain".into(),
            i if i == fin + 1 => "ln_f.bias".into(),
            i if i == fin + 2 => "head.weight".into(),
            _ => "head.bias".into(),
        }
    }

    pub fn class(&self, index: usize) -> TensorClass {
        use block::*;
        let fin = self.final_norm_index();
        match index {
            TOK_EMB | POS_EMB => TensorClass::Embedding,
            i if i < fin => match (i - 2) % PER_BLOCK {
                LN1_G | LN1_B | LN2_G | LN2_B => TensorClass::Norm,
                QKV_W | QKV_B | OUT_W | OUT_B => TensorClass::Attention,
                _ => TensorClass::FeedForward,
            },
            i if i < fin + 2 => TensorClass::Norm,
            _ => TensorClass::Head,
        }
    }

    pub fn zeros_like(&self) -> Vec<Array2<T>> {
        self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Convert to another precision.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone().with_precision(U::PRECISION),
            tensors: self.tensors.iter().map(|t| t.mapv(|v| U::of(v.as_f64()))).collect(),
            num_labels: self.num_labels,
        }
    }

    /// SHA-256 over every tensor's little-endian bytes, as hex. With
    /// `include_head = false` only the base model is covered.
    pub fn checksum(&self, include_head: bool) -> String {
        let end = if include_head { self.tensors.len() } else { self.final_norm_index() + 2 };
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for t in &self.tensors[..end] {
            buf.clear();
            t.iter().for_each(|v| v.write_le(&mut buf));
            hasher.update(&buf);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn expected_shapes(config: &ModelConfig, num_labels: Option<usize>) -> Vec<(usize, usize)> {
        let (v, p, d) = (config.vocab_size, config.max_positions, config.d_model);
        let mut shapes = vec![(v, d), (p, d)];
        for _ in 0..config.layers {
            shapes.extend([
                (1, d),
                (1, d),
                (d, 3 * d),
                (1, 3 * d),
                (d, d),
                (1, d),
                (1, d),
                (1, d),
                (d, 4 * d),
                (1, 4 * d),
                (4 * d, d),
                (1, d),
            ]);
        }
        shapes.extend([(1, d), (1, d)]);
        if let Some(k) = num_labels {
            shapes.extend([(d, k), (1, k)]);
        }
        shapes
    }

    /// Build from explicit tensors, checking every shape against the config.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Array2<T>>, num_labels: Option<usize>) -> Result<Self> {
        config.validate()?;
        let shapes = Self::expected_shapes(&config, num_labels);
        if shapes.len() != tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", shapes.len(), tensors.len())));
        }
        for (i, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.dim() != *s {
                return Err(Error::Checkpoint(format!("tensor {i} has shape {:?}, expected {s:?}", t.dim())));
            }
        }
        Ok(Params {
            config,
            tensors,
            num_labels,
        })
    }
}

/// Checkpoint layout (little-endian):
///
/// ```text
/// magic "BDLMCKPT", version u16 = 1, element bytes u8 (4 or 8),
/// layers, d_model, heads, max_positions, vocab_size, num_labels (0 = none): u32 each,
/// step u64, tokens u64, num_tensors u32,
/// then per tensor in parameter order: rows u32, cols u32, rows*cols elements.
/// ```
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BDLMCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Array2<T>) -> Result<()> {
    w.write_u32::<LE>(t.nrows() as u32)?;
    w.write_u32::<LE>(t.ncols() as u32)?;
    let mut buf = Vec::with_capacity(t.len() * T::PRECISION.bytes());
    t.iter().for_each(|v| v.write_le(&mut buf));
    w.write_all(&buf)?;
    Ok(())
}

/// Read a tensor stored with `stored` precision and convert it to `T`.
pub fn read_tensor<T: Scalar, R: Read>(r: &mut R, stored: Precision) -> Result<Array2<T>> {
    let rows = r.read_u32::<LE>()? as usize;
    let cols = r.read_u32::<LE>()? as usize;
    let width = stored.bytes();
    let mut buf = vec![0u8; rows * cols * width];
    r.read_exact(&mut buf)?;
    let values = buf.chunks_exact(width).map(|c| match stored {
        Precision::F32 => T::of(f32::read_le(c) as f64),
        Precision::F64 => T::of(f64::read_le(c)),
    });
    Ok(Array2::from_shape_vec((rows, cols), values.collect()).expect("length matches shape"))
}

pub fn read_precision<R: Read>(r: &mut R) -> Result<Precision> {
    match r.read_u8()? {
        4 => Ok(Precision::F32),
        8 => Ok(Precision::F64),
        b => Err(Error::Checkpoint(format!("unsupported element width {b}"))),
    }
}

impl<T: Scalar> Params<T> {
    pub fn write_checkpoint<W: Write>(&self, mut w: W, meta: CheckpointMeta) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u16::<LE>(CHECKPOINT_VERSION)?;
        w.write_u8(T::PRECISION.bytes() as u8)?;
        for v in [c.layers, c.d_model, c.heads, c.max_positions, c.vocab_size, self.num_labels.unwrap_or(0)] {
            w.write_u32::<LE>(v as u32)?;
        }
        w.write_u64::<LE>(meta.step)?;
        w.write_u64::<LE>(meta.tokens)?;
        w.write_u32::<LE>(self.tensors.len() as u32)?;
        for t in &self.tensors {
            write_tensor(&mut w, t)?;
        }
        Ok(())
    }

    /// Load a checkpoint of either stored precision, converting to `T`.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Self, CheckpointMeta)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u16::<LE>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let stored = read_precision(&mut r)?;
        let mut field = || -> Result<usize> { Ok(r.read_u32::<LE>()? as usize) };
        let (layers, d_model, heads, max_positions, vocab_size, labels) =
            (field()?, field()?, field()?, field()?, field()?, field()?);
        let config = ModelConfig {
            layers,
            d_model,
            heads,
            max_positions,
            vocab_size,
            precision: T::PRECISION,
        };
        let meta = CheckpointMeta {
            step: r.read_u64::<LE>()?,
            tokens: r.read_u64::<LE>()?,
        };
        let count = r.read_u32::<LE>()? as usize;
        if count > 6 + PER_BLOCK * layers {
            return Err(Error::Checkpoint(format!("implausible tensor count {count}")));
        }
        let tensors = (0..count)
            .map(|_| read_tensor(&mut r, stored))
            .collect::<Result<Vec<_>>>()?;
        let params = Self::from_tensors(config, tensors, (labels > 0).then_some(labels))?;
        Ok((params, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: CheckpointMeta) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf, meta)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CheckpointMeta)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(bytes.as_slice())
    }
}
