use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("vocab too small: {requested} < {minimum} (256 byte symbols + 3 specials)")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("corpus supports only {found} merges but {wanted} were requested")]
    CorpusTooSmall { found: usize, wanted: usize },

    #[error("malformed tokenizer file at line {line}: {message}")]
    TokenizerFormat { line: usize, message: String },

    #[error("token id {0} is not decodable")]
    UnknownToken(u32),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("document length {0} is too short (need at least 2 tokens)")]
    DocumentTooShort(usize),

    #[error("invalid transform plan: {0}")]
    InvalidPlan(String),

    #[error("plan covers {plan} tokens but the document has {doc}")]
    PlanLengthMismatch { plan: usize, doc: usize },

    #[error("slot index out of range: ({i}, {j}) for sequence length {len}")]
    SlotOutOfRange { i: usize, j: usize, len: usize },

    #[error("invalid attention spec: {0}")]
    InvalidAttention(String),

    #[error("example of length {len} exceeds max_len {max_len}")]
    ExampleTooLong { len: usize, max_len: usize },

    #[error("malformed batch record: {0}")]
    BatchRecord(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("position {position} exceeds max_positions {max_positions}")]
    PositionOverflow { position: usize, max_positions: usize },

    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfVocab { id: u32, vocab_size: usize },

    #[error("batch has no valid target slots")]
    NoTargets,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid evaluation input: {0}")]
    InvalidEval(String),

    #[error("classification head already present")]
    HeadAlreadyPresent,

    #[error("classification head missing")]
    HeadMissing,

    #[error("invalid fine-tuning input: {0}")]
    InvalidFinetune(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
