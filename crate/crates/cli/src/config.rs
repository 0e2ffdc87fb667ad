//! Experiment configuration file (TOML).
//!
//! Only `corpus` and `variant` are required. Every table is optional and
//! unknown keys anywhere are rejected. Defaults:
//!
//! ```toml
//! corpus = "data/corpus.txt"      # required
//! variant = "NxtUni"              # required: NxtUni NxtPre MskUni MskBi HybUni HybPre
//! seed = 0
//! format = "plain-blankline"      # or "jsonl-text"
//! valid_fraction = 0.05
//!
//! [tokenizer]
//! vocab_size = 4096               # ignored when `path` names a trained model
//! # path = "tokenizer.bpe"
//!
//! [model]
//! preset = "tiny"                 # tiny 125M 355M 1.3B 2.7B 6.7B
//! precision = "f32"
//! # layers, d_model, heads, max_positions override the preset
//!
//! [train]
//! batch_size_tokens = 4096
//! learning_rate = 1e-3
//! warmup_tokens = 40960
//! total_tokens = 4096000
//! max_len = 256
//! pack = true
//! checkpoint_interval = 0
//! log_interval = 10
//!
//! [train.optimizer]
//! beta1 = 0.9
//! beta2 = 0.98
//! eps = 1e-8
//! weight_decay = 0.01
//! clip_norm = 1.0
//!
//! [eval]
//! r_bidir = [0.0]
//! suffix_ratio = 0.8
//! candidate_k = 32
//! scoring_mode = "full"
//! batch_size = 32
//!
//! [finetune]
//! # train = "cls_train.jsonl"
//! # dev = "cls_dev.jsonl"
//! learning_rates = [5e-6, 1e-5, 2e-5, 5e-5]
//! batch_sizes = [16, 32, 64]
//! r_bidirs = [0.0, 1.0]
//! updates = 2000
//! warmup_fraction = 0.06
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use bidirlm::data::CorpusFormat;
use bidirlm::eval::{EvalConfig, ScoringMode};
use bidirlm::finetune::FinetuneGrid;
use bidirlm::model::ModelConfig;
use bidirlm::objective::Variant;
use bidirlm::scalar::Precision;
use bidirlm::trainer::{AdamWConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: CorpusFormat,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
}

fn default_valid_fraction() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    pub path: Option<PathBuf>,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection { vocab_size: 4096, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub precision: Precision,
    pub layers: Option<usize>,
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub max_positions: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "tiny".into(),
            precision: Precision::F32,
            layers: None,
            d_model: None,
            heads: None,
            max_positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size_tokens: usize,
    pub learning_rate: f64,
    pub warmup_tokens: u64,
    pub total_tokens: u64,
    pub max_len: usize,
    pub pack: bool,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size_tokens: 4096,
            learning_rate: 1e-3,
            warmup_tokens: 40_960,
            total_tokens: 4_096_000,
            max_len: 256,
            pack: true,
            checkpoint_interval: 0,
            log_interval: 10,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub r_bidir: Vec<f64>,
    pub suffix_ratio: f64,
    pub candidate_k: usize,
    pub scoring_mode: ScoringMode,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvalSection {
            r_bidir: vec![0.0],
            suffix_ratio: d.suffix_ratio,
            candidate_k: d.candidate_k,
            scoring_mode: d.scoring_mode,
            batch_size: d.batch_size,
        }
    }
}

impl EvalSection {
    pub fn config(&self, r_bidir: f64) -> EvalConfig {
        EvalConfig {
            r_bidir,
            suffix_ratio: self.suffix_ratio,
            candidate_k: self.candidate_k,
            scoring_mode: self.scoring_mode,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub r_bidirs: Vec<f64>,
    pub updates: u64,
    pub warmup_fraction: f64,
    pub optimizer: AdamWConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let g = FinetuneGrid::default();
        FinetuneSection {
            train: None,
            dev: None,
            learning_rates: g.learning_rates,
            batch_sizes: g.batch_sizes,
            r_bidirs: g.r_bidirs,
            updates: g.updates,
            warmup_fraction: g.warmup_fraction,
            optimizer: g.optimizer,
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self, vocab_size: usize) -> anyhow::Result<ModelConfig> {
        let m = &self.model;
        let mut c = ModelConfig::from_preset(&m.preset, vocab_size).map_err(|e| ConfigError(format!("model.preset: {e}")))?;
        c.vocab_size = vocab_size;
        c.precision = m.precision;
        if let Some(v) = m.layers {
            c.layers = v;
        }
        if let Some(v) = m.d_model {
            c.d_model = v;
        }
        if let Some(v) = m.heads {
            c.heads = v;
        }
        if let Some(v) = m.max_positions {
            c.max_positions = v;
        }
        c.validate().map_err(|e| ConfigError(format!("model: {e}")))?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            variant: self.variant,
            batch_size_tokens: t.batch_size_tokens,
            learning_rate: t.learning_rate,
            warmup_tokens: t.warmup_tokens,
            total_tokens: t.total_tokens,
            max_len: t.max_len,
            seed: self.seed,
            checkpoint_interval: t.checkpoint_interval,
            log_interval: t.log_interval,
            pack: t.pack,
            optimizer: t.optimizer,
        }
    }

    pub fn grid(&self) -> FinetuneGrid {
        let g = &self.finetune;
        FinetuneGrid {
            learning_rates: g.learning_rates.clone(),
            batch_sizes: g.batch_sizes.clone(),
            r_bidirs: g.r_bidirs.clone(),
            updates: g.updates,
            warmup_fraction: g.warmup_fraction,
            seed: self.seed,
            optimizer: g.optimizer,
        }
    }

    /// Semantic checks beyond the schema, each naming the offending field.
    pub fn validate(&self) -> anyhow::Result<()> {
        let bad = |m: String| -> anyhow::Result<()> { Err(ConfigError(m).into()) };
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return bad(format!("valid_fraction: {} outside [0, 1)", self.valid_fraction));
        }
        if self.tokenizer.path.is_none() && self.tokenizer.vocab_size < bidirlm::data::MIN_VOCAB {
            return bad(format!(
                "tokenizer.vocab_size: {} below the minimum {}",
                self.tokenizer.vocab_size,
                bidirlm::data::MIN_VOCAB
            ));
        }
        self.train_config().validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        self.model_config(bidirlm::data::MIN_VOCAB)?;
        if self.eval.r_bidir.is_empty() {
            return bad("eval.r_bidir: empty sweep".into());
        }
        for &r in &self.eval.r_bidir {
            self.eval.config(r).validate().map_err(|e| ConfigError(format!("eval: {e}")))?;
        }
        self.grid().validate().map_err(|e| ConfigError(format!("finetune: {e}")))?;
        Ok(())
    }

    /// Referenced input files must exist when a run starts.
    pub fn check_paths(&self) -> anyhow::Result<()> {
        let mut paths = vec![("corpus", &self.corpus)];
        if let Some(p) = &self.tokenizer.path {
            paths.push(("tokenizer.path", p));
        }
        for (name, p) in paths {
            if !p.exists() {
                return Err(ConfigError(format!("{name}: {} does not exist", p.display())).into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse and validate a config file. Relative paths inside it resolve
/// against the file's directory.
pub fn parse_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = parse_config_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.corpus);
    if let Some(p) = cfg.tokenizer.path.as_mut() {
        resolve(p);
    }
    if let Some(p) = cfg.finetune.train.as_mut() {
        resolve(p);
    }
    if let Some(p) = cfg.finetune.dev.as_mut() {
        resolve(p);
    }
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> anyhow::Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError(e.to_string()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        if path == "." {
            ConfigError(inner)
        } else {
            ConfigError(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}
