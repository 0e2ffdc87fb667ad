//! Pre-norm decoder transformer with learned absolute positions and
//! arbitrary attention predicates.

mod config;
mod forward;
pub mod params;

pub use config::{preset, ModelConfig, Preset, PRESETS, PRESET_VOCAB};
pub use forward::{Graph, LossReport};
pub use params::{CheckpointMeta, Params, TensorClass};
