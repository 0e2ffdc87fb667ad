//! Evaluation protocols: document and suffix perplexity, single-token
//! infilling (direct and by full-sequence scoring) and multiple-choice
//! prompt scoring.
//!
//! Scorers work against [`LogitModel`], so exact stand-ins such as
//! [`UniformModel`] can replace a trained network in tests.

mod infill;
mod mc;
mod perplexity;
mod scorer;

pub use infill::{
    infill_accuracy, infill_direct, infill_direct_batch, infill_full_scoring, infill_full_scoring_batch,
    topk_candidates, FullScore, FullScope, InfillItem, InfillResult,
};
pub use mc::{mnli_item, score_multiple_choice, EncodedMcItem, McItem, McItemResult, McReport, McTask, MNLI_OPTIONS};
pub use perplexity::{full_doc_perplexity, next_token_nll, suffix_perplexity, suffix_plan, PerplexityReport};
pub(crate) use scorer::plain_sequence;
pub use scorer::{log_softmax, round_half_up, LogitModel, ShiftedModel, UniformModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    #[default]
    Full,
    Infill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub r_bidir: f64,
    pub suffix_ratio: f64,
    pub candidate_k: usize,
    pub scoring_mode: ScoringMode,
    /// Sequences per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            r_bidir: 0.0,
            suffix_ratio: 0.8,
            candidate_k: 32,
            scoring_mode: ScoringMode::Full,
            batch_size: 32,
        }
    }
}

impl EvalConfig {
    pub fn with_r_bidir(mut self, r: f64) -> Self {
        self.r_bidir = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r_bidir", self.r_bidir), ("suffix_ratio", self.suffix_ratio)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidEval(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.candidate_k == 0 {
            return Err(Error::InvalidEval("candidate_k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidEval("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}
