use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// Vocabulary size used by the full-scale presets (GPT-2 BPE).
pub const PRESET_VOCAB: usize = 50257;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub precision: Precision,
}

/// A named full-scale configuration with its reference training cost and
/// optimization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub batch_tokens: usize,
    pub learning_rate: f64,
    /// Reference training cost in ZFLOPs at 100B tokens.
    pub reference_zflops: f64,
}

pub const PRESETS: [Preset; 5] = [
    Preset { name: "125M", layers: 12, d_model: 768, heads: 12, batch_tokens: 1 << 19, learning_rate: 6e-4, reference_zflops: 0.11 },
    Preset { name: "355M", layers: 24, d_model: 1024, heads: 16, batch_tokens: 1 << 19, learning_rate: 3e-4, reference_zflops: 0.31 },
    Preset { name: "1.3B", layers: 24, d_model: 2048, heads: 32, batch_tokens: 1 << 20, learning_rate: 2e-4, reference_zflops: 1.11 },
    Preset { name: "2.7B", layers: 32, d_model: 2560, heads: 32, batch_tokens: 1 << 20, learning_rate: 1.6e-4, reference_zflops: 2.23 },
    Preset { name: "6.7B", layers: 32, d_model: 4096, heads: 32, batch_tokens: 1 << 21, learning_rate: 1.2e-4, reference_zflops: 5.49 },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, width 128, 4 heads, 256 positions.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 4,
            d_model: 128,
            heads: 4,
            max_positions: 256,
            vocab_size,
            precision: Precision::F32,
        }
    }

    /// A full-scale preset at sequence length 1024 and the 50257-token vocabulary,
    /// or `tiny` with the given vocabulary.
    pub fn from_preset(name: &str, vocab_size: usize) -> Result<Self> {
        if name.eq_ignore_ascii_case("tiny") {
            return Ok(Self::tiny(vocab_size));
        }
        let p = preset(name).ok_or_else(|| {
            let names: Vec<_> = std::iter::once("tiny").chain(PRESETS.iter().map(|p| p.name)).collect();
            Error::InvalidConfig(format!("unknown preset {name:?}; expected one of {}", names.join(", ")))
        })?;
        Ok(ModelConfig {
            layers: p.layers,
            d_model: p.d_model,
            heads: p.heads,
            max_positions: 1024,
            vocab_size: PRESET_VOCAB,
            precision: Precision::F32,
        })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 {
            return bad("layers, d_model and heads must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.max_positions == 0 {
            return bad("max_positions must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} is too small", self.vocab_size));
        }
        Ok(())
    }

    /// Number of parameters excluding any classification head:
    /// `V·d + P·d + l·(12d² + 13d) + 2d`.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        self.vocab_size * d + self.max_positions * d + self.layers * (12 * d * d + 13 * d) + 2 * d
    }
}
