//! `bidirlm`: command-line front end for tokenizer training, data
//! preparation, pre-training, evaluation and fine-tuning.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// A configuration problem: the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser, Debug)]
#[command(
    name = "bidirlm",
    version,
    about = "Pre-training lab for generalized-bidirectionality language models",
    after_help = "Environment:\n  BIDIRLM_OUT_DIR   output root (same as --out-dir)\n  BIDIRLM_THREADS   worker threads (same as --threads)\n\nExit status: 0 success, 1 runtime failure, 2 usage or config error."
)]
pub struct Cli {
    /// Root directory for run artifacts; each subcommand writes into its own subdirectory.
    #[arg(long, global = true, env = "BIDIRLM_OUT_DIR", default_value = "runs")]
    pub out_dir: PathBuf,

    /// Worker threads for parallel evaluation and fine-tuning (default: all cores).
    #[arg(long, global = true, env = "BIDIRLM_THREADS")]
    pub threads: Option<usize>,

    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,

    /// Validate inputs and print the plan without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,

    /// Model checkpoint (default: <out-dir>/train/model.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Comma-separated r_bidir sweep; overrides `eval.r_bidir`.
    #[arg(long, value_delimiter = ',')]
    pub r_bidir: Option<Vec<f64>>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfillMode {
    Direct,
    Full,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMode {
    Full,
    Infill,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a byte-level BPE tokenizer on the corpus.
    TokenizerTrain(Common),
    /// Tokenize the corpus, split train/valid and write a sample of packed batches.
    Prepare(Common),
    /// Pre-train a model with the configured objective variant.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the config's variant.
        #[arg(long)]
        variant: Option<bidirlm::objective::Variant>,
        /// Continue from the checkpoint and trainer state in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Full-document perplexity on the validation split.
    EvalPpl(EvalArgs),
    /// Suffix perplexity, one CSV row per r_bidir.
    EvalSuffix(EvalArgs),
    /// Single-token infilling accuracy, one CSV row per r_bidir.
    EvalInfill {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value = "direct")]
        mode: InfillMode,
        /// Masked model proposing the top-k candidates for full scoring
        /// (default: every vocabulary entry).
        #[arg(long)]
        candidates_from: Option<PathBuf>,
        /// Documents to evaluate (default: the whole validation split).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Zero-shot multiple-choice scoring of a JSON-lines task file.
    EvalMc {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        task: PathBuf,
        /// Override `eval.scoring_mode` for items without their own mode.
        #[arg(long, value_enum)]
        mode: Option<McMode>,
    },
    /// Fine-tuning grid search for a classification task.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training split (JSON lines); overrides `finetune.train`.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Dev split (JSON lines); overrides `finetune.dev`.
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Training-cost estimate for a preset next to its reference value.
    Flops {
        #[arg(long)]
        preset: String,
        /// Training tokens, e.g. 100e9.
        #[arg(long)]
        tokens: f64,
        #[arg(long, default_value_t = 1024)]
        max_len: usize,
    },
    /// Print the step-by-step mask-and-move trace for one document.
    TraceTransform {
        /// Document token ids, ending with the EOS id.
        #[arg(long, value_delimiter = ',', required = true)]
        tokens: Vec<u32>,
        /// EOS id (default: the last token).
        #[arg(long)]
        eos: Option<u32>,
        /// MASK id (default: one above the largest id).
        #[arg(long)]
        mask_id: Option<u32>,
        /// 1-based masked positions.
        #[arg(long, value_delimiter = ',')]
        masks: Vec<usize>,
        /// Take n_bidir and n_predict from this variant's rules.
        #[arg(long)]
        variant: Option<bidirlm::objective::Variant>,
        #[arg(long)]
        n_bidir: Option<usize>,
        #[arg(long)]
        n_predict: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
