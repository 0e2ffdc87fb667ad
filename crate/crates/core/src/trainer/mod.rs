//! Optimization loop, schedule, optimizer and cost estimate.

mod optim;
mod pipeline;
mod schedule;
mod train;

pub use optim::{clip_grad_norm, global_norm, AdamW, AdamWConfig};
pub use pipeline::{BatchStream, StreamState};
pub use schedule::{flops_estimate, lr_at};
pub use train::{update, StepMetrics, TrainConfig, Trainer, MODEL_FILE, STATE_FILE};
