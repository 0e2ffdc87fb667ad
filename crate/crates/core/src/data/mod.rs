//! Tokenization, corpus ingestion and train/validation splitting.

mod documents;
mod tokenizer;

pub use documents::{
    load_documents, load_texts, read_documents, split_train_valid, CorpusFormat, Document, DocumentStream,
    TextReader,
};
pub use tokenizer::{SpecialTokens, TokenizerModel, BYTE_SYMBOLS, MIN_VOCAB, NUM_SPECIALS};
