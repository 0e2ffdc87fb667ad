use std::io::Write;
use std::path::Path;
use std::time::Instant;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::pipeline::{BatchStream, StreamState};
use super::schedule::lr_at;
use crate::data::{Document, SpecialTokens};
use crate::error::{Error, Result};
use crate::model::params::{read_precision, read_tensor, write_tensor};
use crate::model::{CheckpointMeta, LossReport, Params};
use crate::objective::{PackedBatch, Variant};
use crate::scalar::Scalar;

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub batch_size_tokens: usize,
    pub learning_rate: f64,
    pub warmup_tokens: u64,
    pub total_tokens: u64,
    pub max_len: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default = "one")]
    pub log_interval: u64,
    /// Pack several documents per row; otherwise one document per row.
    #[serde(default = "yes")]
    pub pack: bool,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrainConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_len < 2 {
            return bad(format!("max_len {} < 2", self.max_len));
        }
        if self.batch_size_tokens < self.max_len {
            return bad(format!(
                "batch_size_tokens {} is smaller than one sequence of {}",
                self.batch_size_tokens, self.max_len
            ));
        }
        if self.total_tokens < self.batch_size_tokens as u64 {
            return bad(format!(
                "total_tokens {} < batch_size_tokens {}",
                self.total_tokens, self.batch_size_tokens
            ));
        }
        if self.log_interval == 0 {
            return bad("log_interval must be at least 1".into());
        }
        Ok(())
    }

    pub fn sequences_per_batch(&self) -> usize {
        self.batch_size_tokens / self.max_len
    }

    /// Slots consumed by one step.
    pub fn tokens_per_step(&self) -> u64 {
        (self.sequences_per_batch() * self.max_len) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.total_tokens / self.tokens_per_step()
    }

    pub fn lr_at(&self, tokens: u64) -> f64 {
        lr_at(self.learning_rate, self.warmup_tokens, self.total_tokens, tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub tokens: u64,
    pub loss: f64,
    pub loss_next: Option<f64>,
    pub loss_mask: Option<f64>,
    pub lr: f64,
    pub tok_per_sec: f64,
}

/// Compute the gradient on `batch` and apply one optimizer update.
pub fn update<T: Scalar>(
    params: &mut Params<T>,
    opt: &mut AdamW<T>,
    batch: &PackedBatch,
    lr: f64,
) -> Result<LossReport> {
    let (report, grads) = params.loss_and_grad(batch)?;
    if !report.loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: opt.t + 1, loss: report.loss });
    }
    opt.step(&mut params.tensors, grads, lr);
    Ok(report)
}

pub const STATE_MAGIC: &[u8; 8] = b"BDLMSTAT";
pub const STATE_VERSION: u16 = 1;
pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "trainer.state";

#[derive(Serialize, Deserialize)]
struct Progress {
    config: TrainConfig,
    step: u64,
    tokens: u64,
    optimizer_t: u64,
    stream: StreamState,
}

pub struct Trainer<'d, T: Scalar> {
    pub config: TrainConfig,
    pub params: Params<T>,
    pub optimizer: AdamW<T>,
    stream: BatchStream<'d>,
    pub step: u64,
    pub tokens: u64,
}

impl<'d, T: Scalar> Trainer<'d, T> {
    /// Documents longer than `max_len` must be truncated by the caller.
    pub fn new(config: TrainConfig, params: Params<T>, docs: &'d [Document], specials: SpecialTokens) -> Result<Self> {
        config.validate()?;
        if config.max_len > params.config.max_positions {
            return Err(Error::InvalidTrainConfig(format!(
                "max_len {} exceeds the model's max_positions {}",
                config.max_len, params.config.max_positions
            )));
        }
        let stream = BatchStream::new(
            docs,
            config.variant.spec(),
            config.max_len,
            config.sequences_per_batch(),
            config.pack,
            specials,
            config.seed,
        )?;
        let optimizer = AdamW::new(config.optimizer, &params.tensors);
        Ok(Trainer { config, params, optimizer, stream, step: 0, tokens: 0 })
    }

    pub fn is_done(&self) -> bool {
        self.tokens + self.config.tokens_per_step() > self.config.total_tokens
    }

    pub fn stream_state(&self) -> &StreamState {
        self.stream.state()
    }

    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let start = Instant::now();
        let batch = self.stream.next_batch()?;
        let lr = self.config.lr_at(self.tokens);
        let report = update(&mut self.params, &mut self.optimizer, &batch, lr).map_err(|e| match e {
            Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss { step: self.step + 1, loss },
            e => e,
        })?;
        self.step += 1;
        let consumed = self.config.tokens_per_step();
        self.tokens += consumed;
        Ok(StepMetrics {
            step: self.step,
            tokens: self.tokens,
            loss: report.loss,
            loss_next: report.loss_next,
            loss_mask: report.loss_mask,
            lr,
            tok_per_sec: consumed as f64 / start.elapsed().as_secs_f64().max(1e-9),
        })
    }

    /// Train until the token budget is spent. Metrics at every log interval go
    /// to `log`; with `checkpoint_dir`, periodic checkpoints are written to
    /// `step-NNNNNNNN` subdirectories.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>, mut log: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let m = self.train_step()?;
            if m.step % self.config.log_interval == 0 {
                log(&m)?;
            }
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_interval;
                if every > 0 && self.step % every == 0 {
                    self.save(dir.join(format!("step-{:08}", self.step)))?;
                }
            }
        }
        Ok(())
    }

    /// Write the model checkpoint and the trainer state into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CheckpointMeta { step: self.step, tokens: self.tokens };
        self.params.save(dir.join(MODEL_FILE), meta)?;

        let progress = Progress {
            config: self.config.clone(),
            step: self.step,
            tokens: self.tokens,
            optimizer_t: self.optimizer.t,
            stream: self.stream.state().clone(),
        };
        let json = serde_json::to_vec(&progress).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = Vec::new();
        buf.write_all(STATE_MAGIC)?;
        buf.write_u16::<LE>(STATE_VERSION)?;
        buf.write_u8(T::PRECISION.bytes() as u8)?;
        buf.write_u32::<LE>(json.len() as u32)?;
        buf.write_all(&json)?;
        buf.write_u32::<LE>(self.optimizer.m.len() as u32)?;
        for t in self.optimizer.m.iter().chain(&self.optimizer.v) {
            write_tensor(&mut buf, t)?;
        }
        let path = dir.join(STATE_FILE);
        std::fs::write(&path, buf).map_err(|e| Error::io(path, e))
    }

    /// Continue a run saved with [`Trainer::save`] over the same documents.
    pub fn resume(dir: impl AsRef<Path>, docs: &'d [Document], specials: SpecialTokens) -> Result<Self> {
        let dir = dir.as_ref();
        let (params, meta) = Params::<T>::load(dir.join(MODEL_FILE))?;
        let path = dir.join(STATE_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 8];
        std::io::Read::read_exact(&mut r, &mut magic)?;
        if &magic != STATE_MAGIC {
            return Err(Error::Checkpoint("bad trainer state magic".into()));
        }
        let version = r.read_u16::<LE>()?;
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported trainer state version {version}")));
        }
        let stored = read_precision(&mut r)?;
        let len = r.read_u32::<LE>()? as usize;
        if len > r.len() {
            return Err(Error::Checkpoint("truncated trainer state".into()));
        }
        let progress: Progress =
            serde_json::from_slice(&r[..len]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        r = &r[len..];
        let count = r.read_u32::<LE>()? as usize;
        if count != params.len() {
            return Err(Error::Checkpoint(format!("{count} moment tensors for {} parameters", params.len())));
        }
        let mut read = |n| (0..n).map(|_| read_tensor::<T, _>(&mut r, stored)).collect::<Result<Vec<_>>>();
        let m = read(count)?;
        let v = read(count)?;
        if meta.step != progress.step || meta.tokens != progress.tokens {
            return Err(Error::Checkpoint("model and trainer state disagree on progress".into()));
        }

        let mut trainer = Trainer::new(progress.config, params, docs, specials)?;
        trainer.stream.restore(progress.stream)?;
        trainer.optimizer.t = progress.optimizer_t;
        trainer.optimizer.m = m;
        trainer.optimizer.v = v;
        trainer.step = progress.step;
        trainer.tokens = progress.tokens;
        Ok(trainer)
    }
}
