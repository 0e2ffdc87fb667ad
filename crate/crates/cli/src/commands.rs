use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use bidirlm::data::{load_documents, load_texts, split_train_valid, Document, SpecialTokens, TokenizerModel};
use bidirlm::eval::{
    full_doc_perplexity, infill_accuracy, infill_full_scoring_batch, score_multiple_choice, suffix_perplexity,
    topk_candidates, FullScope, InfillItem, LogitModel, McTask, ScoringMode,
};
use bidirlm::finetune::{finetune, load_records, ClsDataset, ClsExample};
use bidirlm::model::{preset, ModelConfig, Params};
use bidirlm::objective::{record, trace_transform, BidirRule, TransformPlan, Variant};
use bidirlm::scalar::{Precision, Scalar};
use bidirlm::seed::substream;
use bidirlm::trainer::{flops_estimate, BatchStream, Trainer, MODEL_FILE, STATE_FILE};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{parse_config, ExperimentConfig};
use crate::run::{Manifest, RunDir};
use crate::{Cli, Command, Common, ConfigError, EvalArgs, InfillMode, McMode};

const TOKENIZER_DIR: &str = "tokenizer";
const TOKENIZER_FILE: &str = "tokenizer.bpe";
const PREPARE_DIR: &str = "prepare";
const TRAIN_DOCS: &str = "train.jsonl";
const VALID_DOCS: &str = "valid.jsonl";
const SAMPLE_BATCHES: &str = "sample.bdlmpack";
const TRAIN_DIR: &str = "train";
const METRICS_FILE: &str = "metrics.jsonl";
const RESULTS_FILE: &str = "results.jsonl";

pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::TokenizerTrain(c) => tokenizer_train(out, c),
        Command::Prepare(c) => prepare(out, c),
        Command::Train { common, variant, resume } => train(out, common, *variant, *resume),
        Command::EvalPpl(a) => eval_ppl(out, a),
        Command::EvalSuffix(a) => eval_suffix(out, a),
        Command::EvalInfill { eval, mode, candidates_from, limit } => {
            eval_infill(out, eval, *mode, candidates_from.as_deref(), *limit)
        }
        Command::EvalMc { eval, task, mode } => eval_mc(out, eval, task, *mode),
        Command::Finetune { common, checkpoint, train, dev } => {
            run_finetune(out, common, checkpoint.as_deref(), train.as_deref(), dev.as_deref())
        }
        Command::Flops { preset, tokens, max_len } => flops(preset, *tokens, *max_len),
        Command::TraceTransform { tokens, eos, mask_id, masks, variant, n_bidir, n_predict } => {
            trace(tokens, *eos, *mask_id, masks, *variant, *n_bidir, *n_predict)
        }
    }
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    if !c.config.exists() {
        return Err(ConfigError(format!("config file {} does not exist", c.config.display())).into());
    }
    let cfg = parse_config(&c.config)?;
    cfg.check_paths()?;
    Ok(cfg)
}

fn manifest<'a>(command: &'a str, cfg: Option<&ExperimentConfig>) -> Manifest<'a> {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: std::env::args().collect(),
        seed: cfg.map_or(0, |c| c.seed),
        config_hash: cfg.map(|c| c.hash()),
        config: cfg.map(|c| serde_json::to_value(c).expect("config serializes")),
    }
}

fn dry_run(dir: &Path, what: &str) -> anyhow::Result<()> {
    println!("dry run: config valid; {what} would be written to {}", dir.display());
    Ok(())
}

fn tokenizer_path(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    cfg.tokenizer.path.clone().unwrap_or_else(|| out.join(TOKENIZER_DIR).join(TOKENIZER_FILE))
}

fn load_tokenizer(out: &Path, cfg: &ExperimentConfig) -> anyhow::Result<TokenizerModel> {
    let p = tokenizer_path(out, cfg);
    if !p.exists() {
        bail!("no tokenizer at {} (run tokenizer-train or set tokenizer.path)", p.display());
    }
    Ok(TokenizerModel::load(&p)?)
}

fn tokenizer_train(out: &Path, c: &Common) -> anyhow::Result<()> {
    let cfg = load_config(c)?;
    let dir = out.join(TOKENIZER_DIR);
    if c.dry_run {
        return dry_run(&dir, "tokenizer.bpe");
    }
    let texts = load_texts(&cfg.corpus, cfg.format)?;
    let tok = TokenizerModel::train(texts.iter().map(|t| t.as_bytes()), cfg.tokenizer.vocab_size)?;
    let run = RunDir::acquire(&dir)?;
    tok.save(run.file(TOKENIZER_FILE))?;
    run.write_manifest(&manifest("tokenizer-train", Some(&cfg)))?;
    println!("tokenizer with {} ids written to {}", tok.vocab_size(), run.file(TOKENIZER_FILE).display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DocRecord {
    id: String,
    tokens: Vec<u32>,
}

fn write_docs(path: &Path, docs: &[Document]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for d in docs {
        let rec = DocRecord { id: d.source_id.clone(), tokens: d.tokens().to_vec() };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_docs(path: &Path, eos: u32) -> anyhow::Result<Vec<Document>> {
    if !path.exists() {
        bail!("{} not found (run prepare first)", path.display());
    }
    let r = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        docs.push(Document::new(rec.tokens, eos, rec.id)?);
    }
    Ok(docs)
}

fn prepare(out: &Path, c: &Common) -> anyhow::Result<()> {
    let cfg = load_config(c)?;
    let dir = out.join(PREPARE_DIR);
    let tok = load_tokenizer(out, &cfg)?;
    if c.dry_run {
        return dry_run(&dir, "train/valid documents and a batch sample");
    }
    let docs = load_documents(&cfg.corpus, cfg.format, &tok, Some(cfg.train.max_len))?
        .collect::<Result<Vec<_>, _>>()?;
    if docs.is_empty() {
        bail!("corpus {} holds no documents", cfg.corpus.display());
    }
    let (train, valid) = split_train_valid(docs, cfg.valid_fraction, cfg.seed);
    let run = RunDir::acquire(&dir)?;
    write_docs(&run.file(TRAIN_DOCS), &train)?;
    write_docs(&run.file(VALID_DOCS), &valid)?;

    let tc = cfg.train_config();
    let mut stream = BatchStream::new(
        &train,
        tc.variant.spec(),
        tc.max_len,
        tc.sequences_per_batch(),
        tc.pack,
        tok.specials(),
        tc.seed,
    )?;
    let sample: Vec<_> = (0..4).map(|_| stream.next_batch()).collect::<Result<_, _>>()?;
    record::write_batches(BufWriter::new(run.create(SAMPLE_BATCHES)?), &sample)?;
    run.write_manifest(&manifest("prepare", Some(&cfg)))?;
    println!("{} train and {} valid documents written to {}", train.len(), valid.len(), run.path.display());
    Ok(())
}

fn train(out: &Path, c: &Common, variant: Option<Variant>, resume: bool) -> anyhow::Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(v) = variant {
        cfg.variant = v;
    }
    let dir = out.join(TRAIN_DIR);
    if c.dry_run {
        let tc = cfg.train_config();
        println!(
            "variant {} for {} steps of {} tokens",
            tc.variant,
            tc.total_steps(),
            tc.tokens_per_step()
        );
        return dry_run(&dir, "checkpoints and metrics");
    }
    let tok = load_tokenizer(out, &cfg)?;
    let docs = read_docs(&out.join(PREPARE_DIR).join(TRAIN_DOCS), tok.specials().eos)?;
    let model_cfg = cfg.model_config(tok.vocab_size())?;
    let run = RunDir::acquire(&dir)?;
    run.write_manifest(&manifest("train", Some(&cfg)))?;
    match model_cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg, &model_cfg, &run, &docs, tok.specials(), resume),
        Precision::F64 => train_with::<f64>(&cfg, &model_cfg, &run, &docs, tok.specials(), resume),
    }
}

fn train_with<T: Scalar>(
    cfg: &ExperimentConfig,
    model_cfg: &ModelConfig,
    run: &RunDir,
    docs: &[Document],
    specials: SpecialTokens,
    resume: bool,
) -> anyhow::Result<()> {
    let mut trainer = if resume {
        if !run.file(MODEL_FILE).exists() || !run.file(STATE_FILE).exists() {
            bail!("nothing to resume in {}", run.path.display());
        }
        Trainer::<T>::resume(&run.path, docs, specials)?
    } else {
        let params = Params::<T>::init(model_cfg, cfg.seed)?;
        Trainer::new(cfg.train_config(), params, docs, specials)?
    };
    let metrics = OpenOptions::new()
        .create(true)
        .append(resume)
        .write(true)
        .truncate(!resume)
        .open(run.file(METRICS_FILE))?;
    let mut metrics = BufWriter::new(metrics);
    let ckpt_dir = run.file("checkpoints");
    trainer.run(Some(&ckpt_dir), |m| {
        log::info!("step {} loss {:.4} lr {:.3e}", m.step, m.loss, m.lr);
        serde_json::to_writer(&mut metrics, m).map_err(std::io::Error::from)?;
        metrics.write_all(b"\n")?;
        Ok(())
    })?;
    metrics.flush()?;
    trainer.save(&run.path)?;
    println!(
        "trained {} steps ({} tokens); checkpoint at {}",
        trainer.step,
        trainer.tokens,
        run.file(MODEL_FILE).display()
    );
    Ok(())
}

/// Everything an evaluation command needs after validation.
struct EvalSetup {
    cfg: ExperimentConfig,
    tok: TokenizerModel,
    checkpoint: PathBuf,
    sweep: Vec<f64>,
}

fn eval_setup(out: &Path, a: &EvalArgs) -> anyhow::Result<EvalSetup> {
    let cfg = load_config(&a.common)?;
    let sweep = a.r_bidir.clone().unwrap_or_else(|| cfg.eval.r_bidir.clone());
    if sweep.is_empty() {
        return Err(ConfigError("--r-bidir: empty sweep".into()).into());
    }
    for &r in &sweep {
        cfg.eval.config(r).validate().map_err(|e| ConfigError(format!("--r-bidir: {e}")))?;
    }
    let tok = load_tokenizer(out, &cfg)?;
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| out.join(TRAIN_DIR).join(MODEL_FILE));
    if !checkpoint.exists() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    Ok(EvalSetup { cfg, tok, checkpoint, sweep })
}

/// A loaded checkpoint in the configured precision.
enum Model {
    F32(Params<f32>),
    F64(Params<f64>),
}

impl Model {
    fn load(path: &Path, precision: Precision, vocab: usize) -> anyhow::Result<Self> {
        let m = match precision {
            Precision::F32 => Model::F32(Params::load(path)?.0),
            Precision::F64 => Model::F64(Params::load(path)?.0),
        };
        if m.logits().vocab_size() != vocab {
            bail!(
                "checkpoint vocabulary {} does not match the tokenizer's {}",
                m.logits().vocab_size(),
                vocab
            );
        }
        Ok(m)
    }

    fn logits(&self) -> &dyn LogitModel {
        match self {
            Model::F32(p) => p,
            Model::F64(p) => p,
        }
    }
}

fn append_results(run: &RunDir, rows: &[serde_json::Value]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(run.create(RESULTS_FILE)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn valid_docs(out: &Path, tok: &TokenizerModel) -> anyhow::Result<Vec<Document>> {
    let docs = read_docs(&out.join(PREPARE_DIR).join(VALID_DOCS), tok.specials().eos)?;
    if docs.is_empty() {
        bail!("validation split is empty; raise valid_fraction");
    }
    Ok(docs)
}

fn eval_ppl(out: &Path, a: &EvalArgs) -> anyhow::Result<()> {
    let s = eval_setup(out, a)?;
    let dir = out.join("eval-ppl");
    if a.common.dry_run {
        return dry_run(&dir, "perplexity results");
    }
    let docs = valid_docs(out, &s.tok)?;
    let model = Model::load(&s.checkpoint, s.cfg.model.precision, s.tok.vocab_size())?;
    let r = full_doc_perplexity(model.logits(), &docs, s.tok.specials().pad, &s.cfg.eval.config(0.0))?;
    let run = RunDir::acquire(&dir)?;
    append_results(
        &run,
        &[json!({"task": "valid", "model": s.checkpoint, "r_bidir": 0.0, "mode": "document", "ppl": r.perplexity, "tokens": r.tokens})],
    )?;
    run.write_manifest(&manifest("eval-ppl", Some(&s.cfg)))?;
    println!("perplexity {:.4} over {} tokens", r.perplexity, r.tokens);
    Ok(())
}

fn eval_suffix(out: &Path, a: &EvalArgs) -> anyhow::Result<()> {
    let s = eval_setup(out, a)?;
    let dir = out.join("eval-suffix");
    if a.common.dry_run {
        return dry_run(&dir, format!("{} suffix rows", s.sweep.len()).as_str());
    }
    let docs: Vec<Document> = valid_docs(out, &s.tok)?.into_iter().filter(|d| d.len() >= 5).collect();
    if docs.is_empty() {
        bail!("no validation document has the 5 tokens suffix scoring needs");
    }
    let model = Model::load(&s.checkpoint, s.cfg.model.precision, s.tok.vocab_size())?;
    let run = RunDir::acquire(&dir)?;
    let mut csv = String::from("r_bidir,docs,tokens,perplexity\n");
    let mut rows = Vec::new();
    for &r in &s.sweep {
        let rep = suffix_perplexity(model.logits(), &docs, s.tok.specials().pad, &s.cfg.eval.config(r))?;
        csv += &format!("{r},{},{},{}\n", docs.len(), rep.tokens, rep.perplexity);
        rows.push(json!({"task": "valid-suffix", "model": s.checkpoint, "r_bidir": r, "mode": "suffix", "ppl": rep.perplexity}));
    }
    run.write("suffix.csv", &csv)?;
    append_results(&run, &rows)?;
    run.write_manifest(&manifest("eval-suffix", Some(&s.cfg)))?;
    print!("{csv}");
    Ok(())
}

fn eval_infill(
    out: &Path,
    a: &EvalArgs,
    mode: InfillMode,
    candidates_from: Option<&Path>,
    limit: Option<usize>,
) -> anyhow::Result<()> {
    let s = eval_setup(out, a)?;
    let dir = out.join("eval-infill");
    if let Some(p) = candidates_from {
        if !p.exists() {
            bail!("candidate model {} not found", p.display());
        }
    }
    if a.common.dry_run {
        return dry_run(&dir, format!("{} infill rows", s.sweep.len()).as_str());
    }
    let mut docs: Vec<Document> = valid_docs(out, &s.tok)?.into_iter().filter(|d| d.len() >= 2).collect();
    if let Some(l) = limit {
        docs.truncate(l);
    }
    if docs.is_empty() {
        bail!("no validation document has a maskable token");
    }
    let mut rng = substream(s.cfg.seed, "eval-infill");
    let items: Vec<InfillItem<'_>> =
        docs.iter().map(|d| InfillItem { doc: d, position: rng.random_range(1..d.len()) }).collect();
    let specials = s.tok.specials();
    let model = Model::load(&s.checkpoint, s.cfg.model.precision, s.tok.vocab_size())?;
    let proposer = candidates_from
        .map(|p| Model::load(p, s.cfg.model.precision, s.tok.vocab_size()))
        .transpose()?;
    let run = RunDir::acquire(&dir)?;
    let mut csv = String::from("r_bidir,mode,items,accuracy,candidate_containment\n");
    let mut rows = Vec::new();
    for &r in &s.sweep {
        let ec = s.cfg.eval.config(r);
        let (acc, containment, label) = match mode {
            InfillMode::Direct => (infill_accuracy(model.logits(), &items, r, specials, ec.batch_size)?, None, "infill"),
            InfillMode::Full => {
                let cands: Vec<Vec<u32>> = match &proposer {
                    Some(p) => items
                        .iter()
                        .map(|it| topk_candidates(p.logits(), it.doc, it.position, ec.candidate_k, r, specials))
                        .collect::<Result<_, _>>()?,
                    None => vec![(0..s.tok.vocab_size() as u32).collect(); items.len()],
                };
                let hit = items
                    .iter()
                    .zip(&cands)
                    .filter(|(it, c)| c.contains(&it.doc.at(it.position)))
                    .count() as f64
                    / items.len() as f64;
                let res =
                    infill_full_scoring_batch(model.logits(), &items, &cands, FullScope::Document, specials.pad, ec.batch_size)?;
                let acc = res.iter().zip(&items).filter(|(r, it)| r.best == it.doc.at(it.position)).count() as f64
                    / items.len() as f64;
                (acc, Some(hit), "full")
            }
        };
        let c = containment.map_or(String::new(), |h| h.to_string());
        csv += &format!("{r},{label},{},{acc},{c}\n", items.len());
        rows.push(json!({"task": "valid-infill", "model": s.checkpoint, "r_bidir": r, "mode": label, "accuracy": acc}));
    }
    run.write("infill.csv", &csv)?;
    append_results(&run, &rows)?;
    run.write_manifest(&manifest("eval-infill", Some(&s.cfg)))?;
    print!("{csv}");
    Ok(())
}

fn eval_mc(out: &Path, a: &EvalArgs, task_path: &Path, mode: Option<McMode>) -> anyhow::Result<()> {
    let s = eval_setup(out, a)?;
    let dir = out.join("eval-mc");
    let task = McTask::load(task_path)?;
    let items = task.encode(&s.tok)?;
    if a.common.dry_run {
        return dry_run(&dir, format!("{} items x {} ratios", items.len(), s.sweep.len()).as_str());
    }
    let model = Model::load(&s.checkpoint, s.cfg.model.precision, s.tok.vocab_size())?;
    let run = RunDir::acquire(&dir)?;
    let mut csv = String::from("task,r_bidir,mode,items,accuracy,accuracy_mean\n");
    let mut rows = Vec::new();
    for &r in &s.sweep {
        let mut ec = s.cfg.eval.config(r);
        if let Some(m) = mode {
            ec.scoring_mode = match m {
                McMode::Full => ScoringMode::Full,
                McMode::Infill => ScoringMode::Infill,
            };
        }
        let rep = score_multiple_choice(model.logits(), &items, s.tok.specials(), s.tok.specials().eos, &ec)?;
        let label = serde_json::to_value(ec.scoring_mode)?;
        let label = label.as_str().unwrap_or("full");
        csv += &format!("{},{r},{label},{},{},{}\n", task.name, items.len(), rep.accuracy, rep.accuracy_mean);
        rows.push(json!({"task": task.name, "model": s.checkpoint, "r_bidir": r, "mode": label, "accuracy": rep.accuracy}));
    }
    run.write("mc.csv", &csv)?;
    append_results(&run, &rows)?;
    run.write_manifest(&manifest("eval-mc", Some(&s.cfg)))?;
    print!("{csv}");
    Ok(())
}

fn encode_split(path: &Path, tok: &TokenizerModel, max_len: usize) -> anyhow::Result<Vec<ClsExample>> {
    load_records(path)?
        .iter()
        .map(|r| ClsExample::encode(r, tok, max_len).map_err(Into::into))
        .collect()
}

fn run_finetune(
    out: &Path,
    c: &Common,
    checkpoint: Option<&Path>,
    train: Option<&Path>,
    dev: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = load_config(c)?;
    let train = train
        .map(Path::to_path_buf)
        .or_else(|| cfg.finetune.train.clone())
        .ok_or_else(|| ConfigError("finetune.train: no training split given".into()))?;
    let dev = dev
        .map(Path::to_path_buf)
        .or_else(|| cfg.finetune.dev.clone())
        .ok_or_else(|| ConfigError("finetune.dev: no dev split given".into()))?;
    for p in [&train, &dev] {
        if !p.exists() {
            return Err(ConfigError(format!("{} does not exist", p.display())).into());
        }
    }
    let checkpoint = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(TRAIN_DIR).join(MODEL_FILE));
    let grid = cfg.grid();
    let dir = out.join("finetune");
    if c.dry_run {
        return dry_run(&dir, format!("a {}-cell grid", grid.cells().len()).as_str());
    }
    if !checkpoint.exists() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    let tok = load_tokenizer(out, &cfg)?;
    let pad = tok.specials().pad;
    let run_grid = |max_len: usize| -> anyhow::Result<ClsDataset> {
        Ok(ClsDataset::new(encode_split(&train, &tok, max_len)?, encode_split(&dev, &tok, max_len)?)?)
    };
    let report = match cfg.model.precision {
        Precision::F32 => {
            let (p, _) = Params::<f32>::load(&checkpoint)?;
            finetune(&p, &run_grid(p.config.max_positions)?, &grid, pad)?
        }
        Precision::F64 => {
            let (p, _) = Params::<f64>::load(&checkpoint)?;
            finetune(&p, &run_grid(p.config.max_positions)?, &grid, pad)?
        }
    };
    let run = RunDir::acquire(&dir)?;
    run.write("grid.csv", report.to_csv())?;
    run.write("best.json", serde_json::to_string_pretty(&report.best)? + "\n")?;
    run.write_manifest(&manifest("finetune", Some(&cfg)))?;
    print!("{}", report.to_csv());
    println!(
        "best: lr {} batch {} r_bidir {} dev accuracy {:.4}",
        report.best.lr, report.best.batch_size, report.best.r_bidir, report.best.dev_accuracy
    );
    Ok(())
}

fn flops(name: &str, tokens: f64, max_len: usize) -> anyhow::Result<()> {
    let p = preset(name).ok_or_else(|| {
        let names: Vec<_> = bidirlm::model::PRESETS.iter().map(|p| p.name).collect();
        ConfigError(format!("--preset: unknown {name:?}; expected one of {}", names.join(", ")))
    })?;
    if !(tokens > 0.0 && tokens.is_finite()) {
        return Err(ConfigError("--tokens must be positive".into()).into());
    }
    let cfg = ModelConfig::from_preset(p.name, bidirlm::model::PRESET_VOCAB)?;
    let est = flops_estimate(&cfg, max_len, tokens) / 1e21;
    let reference = p.reference_zflops * tokens / 100e9;
    println!("preset,tokens,estimate_zflops,reference_zflops,ratio");
    println!("{},{tokens:e},{est:.4},{reference:.4},{:.3}", p.name, est / reference);
    Ok(())
}

fn trace(
    tokens: &[u32],
    eos: Option<u32>,
    mask_id: Option<u32>,
    masks: &[usize],
    variant: Option<Variant>,
    n_bidir: Option<usize>,
    n_predict: Option<usize>,
) -> anyhow::Result<()> {
    let eos = eos.or(tokens.last().copied()).ok_or_else(|| anyhow!("empty document"))?;
    let mask = mask_id.unwrap_or_else(|| tokens.iter().copied().max().unwrap_or(0) + 1);
    let doc = Document::new(tokens.to_vec(), eos, "cli").map_err(|e| ConfigError(format!("--tokens: {e}")))?;
    let n = doc.len();
    let (nb, np) = match variant {
        Some(v) => {
            let spec = v.spec();
            let nb = match (spec.bidir_rule, n_bidir) {
                (_, Some(nb)) => nb,
                (BidirRule::Zero, None) => 0,
                (BidirRule::Full, None) => n,
                (BidirRule::Uniform, None) => {
                    return Err(ConfigError(format!("--n-bidir is required for {v}")).into());
                }
            };
            (nb, n_predict.unwrap_or_else(|| spec.predict_rule.apply(n, masks.len(), nb)))
        }
        None => (n_bidir.unwrap_or(0), n_predict.unwrap_or(n)),
    };
    let plan = TransformPlan::new(n, masks.to_vec(), nb, np).map_err(|e| ConfigError(format!("plan: {e}")))?;
    let text = trace_transform(&doc, &plan, mask, |t| {
        if t == eos {
            "</s>".into()
        } else if t == mask {
            "M".into()
        } else {
            t.to_string()
        }
    })?;
    print!("{text}");
    Ok(())
}
