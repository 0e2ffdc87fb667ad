use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::infill::{infill_direct_batch, InfillItem};
use super::scorer::{next_token_logprobs, LogitModel};
use super::{EvalConfig, ScoringMode};
use crate::data::{Document, SpecialTokens, TokenizerModel};
use crate::error::{Error, Result};

pub const MNLI_OPTIONS: [&str; 3] = ["Yes", "No", "Also"];

/// One multiple-choice item as stored on disk: a template with a single
/// `{}` blank, the option strings and the index of the gold option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McItem {
    pub template: String,
    pub options: Vec<String>,
    pub gold: usize,
    /// Overrides the configured scoring mode for this item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScoringMode>,
}

impl McItem {
    pub fn validate(&self) -> Result<()> {
        if self.template.matches("{}").count() != 1 {
            return Err(Error::InvalidEval("template needs exactly one {} blank".into()));
        }
        if self.options.len() < 2 {
            return Err(Error::InvalidEval("an item needs at least two options".into()));
        }
        if self.gold >= self.options.len() {
            return Err(Error::InvalidEval(format!(
                "gold index {} out of {} options",
                self.gold,
                self.options.len()
            )));
        }
        Ok(())
    }

    /// Text before and after the blank.
    pub fn split(&self) -> (&str, &str) {
        self.template.split_once("{}").expect("validated template")
    }

    /// The prompt populated with option `k`.
    pub fn populated(&self, k: usize) -> String {
        let (before, after) = self.split();
        format!("{before}{}{after}", self.options[k])
    }

    /// Tokenized form. Each segment is encoded on its own so the option
    /// occupies a fixed span regardless of its neighbours.
    pub fn encode(&self, tok: &TokenizerModel) -> Result<EncodedMcItem> {
        self.validate()?;
        let (before, after) = self.split();
        Ok(EncodedMcItem {
            before: tok.encode(before),
            options: self.options.iter().map(|o| tok.encode(o)).collect(),
            after: tok.encode(after),
            gold: self.gold,
            mode: self.mode,
        })
    }
}

/// `<premise>, right? {}, <hypothesis>` with the three-way verbalizer.
pub fn mnli_item(premise: &str, hypothesis: &str, gold: usize) -> McItem {
    McItem {
        template: format!("{premise}, right? {{}}, {hypothesis}"),
        options: MNLI_OPTIONS.iter().map(|s| s.to_string()).collect(),
        gold,
        mode: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMcItem {
    pub before: Vec<u32>,
    pub options: Vec<Vec<u32>>,
    pub after: Vec<u32>,
    pub gold: usize,
    pub mode: Option<ScoringMode>,
}

impl EncodedMcItem {
    /// `before ++ option ++ after ++ [eos]`.
    pub fn sequence(&self, k: usize, eos: u32) -> Vec<u32> {
        let mut t = self.before.clone();
        t.extend(&self.options[k]);
        t.extend(&self.after);
        t.push(eos);
        t
    }

    fn check(&self, mode: ScoringMode) -> Result<()> {
        if self.options.len() < 2 || self.gold >= self.options.len() {
            return Err(Error::InvalidEval("item needs two options and a valid gold index".into()));
        }
        if self.options.iter().any(|o| o.is_empty()) {
            return Err(Error::InvalidEval("option encodes to no tokens".into()));
        }
        if mode == ScoringMode::Infill {
            if let Some(o) = self.options.iter().find(|o| o.len() != 1) {
                return Err(Error::InvalidEval(format!(
                    "infill scoring needs single-token options, got {} tokens",
                    o.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTask {
    pub name: String,
    pub items: Vec<McItem>,
}

impl McTask {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read(std::io::BufReader::new(f), name)
    }

    pub fn read<R: BufRead>(reader: R, name: impl Into<String>) -> Result<Self> {
        let mut items = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let item: McItem = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedRecord { line: i + 1, message: e.to_string() })?;
            item.validate()
                .map_err(|e| Error::MalformedRecord { line: i + 1, message: e.to_string() })?;
            items.push(item);
        }
        Ok(McTask { name: name.into(), items })
    }

    pub fn encode(&self, tok: &TokenizerModel) -> Result<Vec<EncodedMcItem>> {
        self.items.iter().map(|it| it.encode(tok)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McItemResult {
    pub mode: ScoringMode,
    /// Total log-probability per option (full mode) or the option token's
    /// infill probability (infill mode).
    pub scores: Vec<f64>,
    /// Per-token mean log-probability; full mode only.
    pub mean_scores: Option<Vec<f64>>,
    pub choice: usize,
    pub choice_mean: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub accuracy: f64,
    /// Accuracy when full-mode items are ranked by per-token mean.
    pub accuracy_mean: f64,
    pub items: Vec<McItemResult>,
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Zero-shot scoring. Full mode ranks the populated prompts by causal
/// log-probability; infill mode masks the option slot and reads the
/// probability of each single-token option. Ties go to the lowest index.
pub fn score_multiple_choice<M: LogitModel + ?Sized>(
    model: &M,
    items: &[EncodedMcItem],
    specials: SpecialTokens,
    eos: u32,
    cfg: &EvalConfig,
) -> Result<McReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidEval("task has no items".into()));
    }
    let modes: Vec<ScoringMode> = items.iter().map(|it| it.mode.unwrap_or(cfg.scoring_mode)).collect();
    for (it, &m) in items.iter().zip(&modes) {
        it.check(m)?;
    }

    let full_seqs: Vec<Vec<u32>> = items
        .iter()
        .zip(&modes)
        .filter(|(_, &m)| m == ScoringMode::Full)
        .flat_map(|(it, _)| (0..it.options.len()).map(|k| it.sequence(k, eos)))
        .collect();
    let refs: Vec<(&[u32], usize)> = full_seqs.iter().map(|t| (t.as_slice(), 0)).collect();
    let mut full_lp = next_token_logprobs(model, &refs, specials.pad, cfg.batch_size)?.into_iter();

    let infill_docs: Vec<(Document, usize)> = items
        .iter()
        .zip(&modes)
        .filter(|(_, &m)| m == ScoringMode::Infill)
        .map(|(it, _)| Ok((Document::new(it.sequence(0, eos), eos, "mc")?, it.before.len() + 1)))
        .collect::<Result<_>>()?;
    let infill_items: Vec<InfillItem<'_>> =
        infill_docs.iter().map(|(d, p)| InfillItem { doc: d, position: *p }).collect();
    let mut infill =
        infill_direct_batch(model, &infill_items, cfg.r_bidir, specials, cfg.batch_size)?.into_iter();

    let mut results = Vec::with_capacity(items.len());
    for (it, &mode) in items.iter().zip(&modes) {
        let r = match mode {
            ScoringMode::Full => {
                let mut scores = Vec::with_capacity(it.options.len());
                let mut means = Vec::with_capacity(it.options.len());
                for _ in &it.options {
                    let v = full_lp.next().expect("one score per option");
                    let total: f64 = v.iter().sum();
                    means.push(total / v.len().max(1) as f64);
                    scores.push(total);
                }
                McItemResult {
                    mode,
                    choice: first_argmax(&scores),
                    choice_mean: first_argmax(&means),
                    scores,
                    mean_scores: Some(means),
                    gold: it.gold,
                }
            }
            ScoringMode::Infill => {
                let dist = infill.next().expect("one distribution per infill item");
                let scores: Vec<f64> = it.options.iter().map(|o| dist.probs[o[0] as usize]).collect();
                let choice = first_argmax(&scores);
                McItemResult { mode, choice, choice_mean: choice, scores, mean_scores: None, gold: it.gold }
            }
        };
        results.push(r);
    }
    let n = results.len() as f64;
    Ok(McReport {
        accuracy: results.iter().filter(|r| r.choice == r.gold).count() as f64 / n,
        accuracy_mean: results.iter().filter(|r| r.choice_mean == r.gold).count() as f64 / n,
        items: results,
    })
}
