use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::TokenizerModel;
use crate::error::{Error, Result};

/// A tokenized document. The final token is EOS and no other token is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    tokens: Vec<u32>,
    pub source_id: String,
}

impl Document {
    /// Validate an already-terminated token sequence.
    pub fn new(tokens: Vec<u32>, eos: u32, source_id: impl Into<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::DocumentTooShort(tokens.len()));
        }
        if tokens.last() != Some(&eos) {
            return Err(Error::InvalidDocument("document must end with EOS".into()));
        }
        if tokens[..tokens.len() - 1].contains(&eos) {
            return Err(Error::InvalidDocument("interior EOS".into()));
        }
        Ok(Document {
            tokens,
            source_id: source_id.into(),
        })
    }

    /// Append EOS to `content`, truncating content so the total length is at
    /// most `max_len`.
    pub fn from_content(
        mut content: Vec<u32>,
        eos: u32,
        source_id: impl Into<String>,
        max_len: Option<usize>,
    ) -> Result<Self> {
        if let Some(max_len) = max_len {
            if max_len < 2 {
                return Err(Error::InvalidDocument(format!("max_len {max_len} < 2")));
            }
            content.truncate(max_len - 1);
        }
        content.push(eos);
        Self::new(content, eos, source_id)
    }

    /// Keep at most `max_len` tokens, the last of which stays EOS.
    pub fn truncated(mut self, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::InvalidDocument(format!("max_len {max_len} < 2")));
        }
        if self.tokens.len() > max_len {
            let eos = self.eos();
            self.tokens.truncate(max_len - 1);
            self.tokens.push(eos);
        }
        Ok(self)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at 1-based position `p`.
    pub fn at(&self, p: usize) -> u32 {
        self.tokens[p - 1]
    }

    pub fn eos(&self) -> u32 {
        *self.tokens.last().expect("non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// Plain text; documents separated by one or more blank lines.
    #[default]
    #[serde(alias = "plain")]
    PlainBlankline,
    /// One JSON object per line with a `"text"` string field.
    #[serde(alias = "jsonl")]
    JsonlText,
}

/// Raw document texts in file order, with the line each one started on.
pub struct TextReader<R> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
    format: CorpusFormat,
    done: bool,
}

impl<R: BufRead> TextReader<R> {
    pub fn new(reader: R, format: CorpusFormat) -> Self {
        TextReader {
            lines: reader.lines().enumerate(),
            format,
            done: false,
        }
    }
}

impl<R: BufRead> Iterator for TextReader<R> {
    type Item = Result<(usize, String)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.format {
            CorpusFormat::PlainBlankline => {
                let mut start = 0;
                let mut buf: Vec<String> = Vec::new();
                loop {
                    match self.lines.next() {
                        None => {
                            self.done = true;
                            return (!buf.is_empty()).then(|| Ok((start, buf.join("\n"))));
                        }
                        Some((_, Err(e))) => return Some(Err(e.into())),
                        Some((i, Ok(line))) => {
                            if line.trim().is_empty() {
                                if !buf.is_empty() {
                                    return Some(Ok((start, buf.join("\n"))));
                                }
                            } else {
                                if buf.is_empty() {
                                    start = i + 1;
                                }
                                buf.push(line);
                            }
                        }
                    }
                }
            }
            CorpusFormat::JsonlText => loop {
                let (i, line) = match self.lines.next()? {
                    (_, Err(e)) => return Some(Err(e.into())),
                    (i, Ok(line)) => (i + 1, line),
                };
                if line.trim().is_empty() {
                    continue;
                }
                let malformed = |message: String| Error::MalformedRecord { line: i, message };
                let value: serde_json::Value = match serde_json::from_str(&line) {
                    Ok(v) => v,
                    Err(e) => return Some(Err(malformed(e.to_string()))),
                };
                return Some(match value.get("text").and_then(|t| t.as_str()) {
                    Some(text) => Ok((i, text.to_string())),
                    None => Err(malformed("missing string field \"text\"".into())),
                });
            },
        }
    }
}

/// Stream of tokenized documents from a corpus file.
///
/// Malformed records surface as errors carrying their line number; empty
/// documents are skipped with a warning.
pub struct DocumentStream<'t, R> {
    texts: TextReader<R>,
    tokenizer: &'t TokenizerModel,
    max_len: Option<usize>,
    source: String,
}

impl<R: BufRead> Iterator for DocumentStream<'_, R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line, text) = match self.texts.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e)),
            };
            let content = self.tokenizer.encode(&text);
            if content.is_empty() {
                log::warn!("{}:{line}: skipping empty document", self.source);
                continue;
            }
            let id = format!("{}:{line}", self.source);
            return Some(Document::from_content(
                content,
                self.tokenizer.specials().eos,
                id,
                self.max_len,
            ));
        }
    }
}

pub fn load_documents<'t>(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    tokenizer: &'t TokenizerModel,
    max_len: Option<usize>,
) -> Result<DocumentStream<'t, BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_documents(
        BufReader::new(file),
        format,
        tokenizer,
        max_len,
        path.display().to_string(),
    ))
}

pub fn read_documents<R: BufRead>(
    reader: R,
    format: CorpusFormat,
    tokenizer: &TokenizerModel,
    max_len: Option<usize>,
    source: String,
) -> DocumentStream<'_, R> {
    DocumentStream {
        texts: TextReader::new(reader, format),
        tokenizer,
        max_len,
        source,
    }
}

/// Read every raw text of a corpus file.
pub fn load_texts(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    TextReader::new(BufReader::new(file), format)
        .map(|r| r.map(|(_, t)| t))
        .collect()
}

/// Deterministic shuffled split; returns `(train, valid)`.
pub fn split_train_valid(
    mut docs: Vec<Document>,
    valid_fraction: f64,
    seed: u64,
) -> (Vec<Document>, Vec<Document>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    let n_valid = ((docs.len() as f64) * valid_fraction.clamp(0.0, 1.0)).round() as usize;
    let valid = docs.split_off(docs.len() - n_valid.min(docs.len()));
    (docs, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> TokenizerModel {
        TokenizerModel::from_merges(vec![])
    }

    fn read(input: &str, format: CorpusFormat) -> Vec<Result<Document>> {
        let t = tok();
        read_documents(input.as_bytes(), format, &t, None, "mem".into()).collect()
    }

    #[test]
    fn plain_blank_line_separation() {
        let docs = read("hello\n\nworld", CorpusFormat::PlainBlankline);
        assert_eq!(docs.len(), 2);
        let first = docs[0].as_ref().unwrap();
        assert_eq!(first.len(), 6);
        assert_eq!(first.eos(), tok().specials().eos);
        assert_eq!(first.source_id, "mem:1");
    }

    #[test]
    fn plain_multiline_documents_keep_newlines() {
        let docs = read("a\nb\n\n\n\nc\n", CorpusFormat::PlainBlankline);
        let t = tok();
        let first = docs[0].as_ref().unwrap();
        assert_eq!(t.decode(&first.tokens()[..first.len() - 1]).unwrap(), "a\nb");
        assert_eq!(docs.len(), 2);
    }

    #[test]
    fn jsonl_records() {
        let input = "{\"text\":\"one\"}\n{\"text\":\"two\",\"meta\":1}\n\n{\"text\":\"three\"}\n";
        let docs = read(input, CorpusFormat::JsonlText);
        assert_eq!(docs.len(), 3);
        assert!(docs.iter().all(|d| d.is_ok()));
    }

    #[test]
    fn jsonl_missing_text_reports_line() {
        let input = "{\"text\":\"one\"}\n{\"body\":\"two\"}\n";
        let docs = read(input, CorpusFormat::JsonlText);
        match &docs[1] {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(*line, 2),
            other => panic!("expected malformed record, got {other:?}"),
        }
    }

    #[test]
    fn empty_jsonl_text_is_skipped() {
        let input = "{\"text\":\"\"}\n{\"text\":\"x\"}\n";
        let docs = read(input, CorpusFormat::JsonlText);
        assert_eq!(docs.len(), 1);
    }

    #[test]
    fn truncation_keeps_eos() {
        let eos = 258;
        let doc = Document::from_content((0..100).collect(), eos, "x", Some(10)).unwrap();
        assert_eq!(doc.len(), 10);
        assert_eq!(doc.tokens()[9], eos);
        assert_eq!(doc.tokens()[8], 8);
    }

    #[test]
    fn document_invariants() {
        assert!(Document::new(vec![258], 258, "x").is_err());
        assert!(Document::new(vec![1, 2], 258, "x").is_err());
        assert!(Document::new(vec![258, 1, 258], 258, "x").is_err());
        assert!(Document::new(vec![1, 258], 258, "x").is_ok());
    }

    #[test]
    fn split_is_deterministic_and_complete() {
        let docs: Vec<Document> = (0..20)
            .map(|i| Document::new(vec![i, 258], 258, format!("{i}")).unwrap())
            .collect();
        let (a, b) = split_train_valid(docs.clone(), 0.25, 3);
        let (c, d) = split_train_valid(docs, 0.25, 3);
        assert_eq!((a.len(), b.len()), (15, 5));
        assert_eq!(a, c);
        assert_eq!(b, d);
    }
}
