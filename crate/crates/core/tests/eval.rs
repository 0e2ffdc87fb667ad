use bidirlm::data::{Document, SpecialTokens, TokenizerModel};
use bidirlm::eval::{
    full_doc_perplexity, infill_direct, infill_full_scoring, score_multiple_choice, suffix_perplexity,
    topk_candidates, EncodedMcItem, EvalConfig, FullScope, McItem, ScoringMode, ShiftedModel, UniformModel,
};
use bidirlm::model::{ModelConfig, Params};
use bidirlm::objective::{sample_plan, transform, PackedBatch, Variant};
use bidirlm::scalar::Precision;
use bidirlm::seed::substream;
use bidirlm::synthetic::{infill_corpus, INFILL_SPECIALS, INFILL_VOCAB};
use bidirlm::trainer::{update, AdamW, AdamWConfig};

const PAD: u32 = INFILL_SPECIALS.pad;
const EOS: u32 = INFILL_SPECIALS.eos;

fn random_model(seed: u64) -> Params<f64> {
    let cfg = ModelConfig {
        layers: 2,
        d_model: 32,
        heads: 2,
        max_positions: 64,
        vocab_size: INFILL_VOCAB,
        precision: Precision::F64,
    };
    Params::init(&cfg, seed).unwrap()
}

/// A small model trained to memorise `docs` under `variant`.
fn memorised(docs: &[Document], variant: Variant) -> Params<f32> {
    let cfg = ModelConfig { layers: 2, d_model: 64, heads: 4, max_positions: 64, vocab_size: INFILL_VOCAB, precision: Precision::F32 };
    let mut params = Params::<f32>::init(&cfg, 1).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default(), &params.tensors);
    let mut rng = substream(1, "memorise");
    for _ in 0..300 {
        let examples: Vec<_> = docs
            .iter()
            .map(|d| transform(d, &sample_plan(&variant.spec(), d.len(), &mut rng).unwrap(), INFILL_SPECIALS.mask).unwrap())
            .collect();
        let batch = PackedBatch::one_per_row(&examples, PAD).unwrap();
        update(&mut params, &mut opt, &batch, 3e-3).unwrap();
    }
    params
}

#[test]
fn infill_distribution_is_normalised() {
    let model = random_model(1);
    for doc in infill_corpus(5, 1, "norm") {
        for (pos, r) in [(1, 0.0), (7, 0.5), (23, 1.0)] {
            let out = infill_direct(&model, &doc, pos, r, INFILL_SPECIALS).unwrap();
            assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(out.probs.len(), INFILL_VOCAB);
        }
    }
}

#[test]
fn uniform_stub_gives_uniform_infill() {
    let model = UniformModel { vocab_size: INFILL_VOCAB };
    let doc = &infill_corpus(1, 2, "uniform")[0];
    let out = infill_direct(&model, doc, 4, 0.0, INFILL_SPECIALS).unwrap();
    assert!(out.probs.iter().all(|&p| (p - 1.0 / INFILL_VOCAB as f64).abs() < 1e-12));
    assert_eq!(out.argmax, 0);
    let ppl = full_doc_perplexity(&model, &[doc.clone()], PAD, &EvalConfig::default()).unwrap();
    assert!((ppl.perplexity - INFILL_VOCAB as f64).abs() < 1e-9);
}

#[test]
fn infilling_the_eos_position_is_an_error() {
    let model = random_model(2);
    let doc = &infill_corpus(1, 3, "eos")[0];
    assert!(infill_direct(&model, doc, doc.len(), 0.0, INFILL_SPECIALS).is_err());
    assert!(infill_direct(&model, doc, 0, 0.0, INFILL_SPECIALS).is_err());
}

#[test]
fn topk_ranks_by_infill_probability() {
    let model = random_model(3);
    let doc = &infill_corpus(1, 4, "topk")[0];
    let probs = infill_direct(&model, doc, 6, 1.0, INFILL_SPECIALS).unwrap();
    let all = topk_candidates(&model, doc, 6, INFILL_VOCAB, 1.0, INFILL_SPECIALS).unwrap();
    let mut sorted = all.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..INFILL_VOCAB as u32).collect::<Vec<_>>());
    for w in all.windows(2) {
        assert!(probs.probs[w[0] as usize] >= probs.probs[w[1] as usize]);
    }
    assert_eq!(topk_candidates(&model, doc, 6, 1, 1.0, INFILL_SPECIALS).unwrap(), vec![probs.argmax]);
    assert!(topk_candidates(&model, doc, 6, INFILL_VOCAB + 1, 1.0, INFILL_SPECIALS).is_err());
}

#[test]
fn full_scoring_is_shift_invariant_and_handles_singletons() {
    let model = random_model(4);
    let shifted = ShiftedModel { inner: model.clone(), shift: 17.5 };
    let all: Vec<u32> = (0..29).collect();
    for doc in infill_corpus(4, 5, "shift") {
        for scope in [FullScope::Document, FullScope::SuffixFromMask] {
            let a = infill_full_scoring(&model, &doc, 5, &all, scope, PAD).unwrap();
            let b = infill_full_scoring(&shifted, &doc, 5, &all, scope, PAD).unwrap();
            assert_eq!(a.best, b.best);
            for ((ta, sa), (tb, sb)) in a.scores.iter().zip(&b.scores) {
                assert_eq!(ta, tb);
                assert!((sa - sb).abs() < 1e-8);
            }
        }
        let gold = doc.at(5);
        assert_eq!(infill_full_scoring(&model, &doc, 5, &[gold], FullScope::Document, PAD).unwrap().best, gold);
    }
    let doc = &infill_corpus(1, 6, "empty")[0];
    assert!(infill_full_scoring(&model, doc, 5, &[], FullScope::Document, PAD).is_err());
}

#[test]
fn full_scoring_ties_go_to_the_lowest_id() {
    let model = UniformModel { vocab_size: INFILL_VOCAB };
    let doc = &infill_corpus(1, 7, "ties")[0];
    assert_eq!(infill_full_scoring(&model, doc, 3, &[9, 4, 12], FullScope::Document, PAD).unwrap().best, 4);
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let model = random_model(5);
    let before = model.checksum(true);
    let docs = infill_corpus(6, 8, "untouched");
    let cfg = EvalConfig::default().with_r_bidir(0.5);
    suffix_perplexity(&model, &docs, PAD, &cfg).unwrap();
    full_doc_perplexity(&model, &docs, PAD, &cfg).unwrap();
    infill_direct(&model, &docs[0], 3, 1.0, INFILL_SPECIALS).unwrap();
    infill_full_scoring(&model, &docs[0], 3, &[1, 2, 3], FullScope::Document, PAD).unwrap();
    assert_eq!(model.checksum(true), before);
}

fn mc_items() -> Vec<EncodedMcItem> {
    let mut rng = substream(9, "mc");
    use rand::Rng;
    (0..12)
        .map(|_| {
            let mut tok = |n: usize| -> Vec<u32> { (0..n).map(|_| rng.random_range(0..29)).collect() };
            EncodedMcItem {
                before: tok(5),
                options: vec![tok(1), tok(2), tok(1)],
                after: tok(4),
                gold: 1,
                mode: Some(ScoringMode::Full),
            }
        })
        .collect()
}

#[test]
fn multiple_choice_is_invariant_to_option_order() {
    let model = random_model(6);
    let cfg = EvalConfig::default();
    let items = mc_items();
    let forward = score_multiple_choice(&model, &items, INFILL_SPECIALS, EOS, &cfg).unwrap();
    let reversed: Vec<EncodedMcItem> = items
        .iter()
        .map(|it| {
            let mut r = it.clone();
            r.options.reverse();
            r.gold = it.options.len() - 1 - it.gold;
            r
        })
        .collect();
    let backward = score_multiple_choice(&model, &reversed, INFILL_SPECIALS, EOS, &cfg).unwrap();
    assert_eq!(forward.accuracy, backward.accuracy);
    for (f, b) in forward.items.iter().zip(&backward.items) {
        assert_eq!(f.choice, 2 - b.choice);
        let mut rev = b.scores.clone();
        rev.reverse();
        assert_eq!(f.scores, rev);
    }
}

#[test]
fn identical_options_pick_the_first_index() {
    let model = random_model(7);
    let mut item = mc_items().remove(0);
    item.options = vec![vec![4], vec![4], vec![4]];
    let report = score_multiple_choice(&model, &[item.clone()], INFILL_SPECIALS, EOS, &EvalConfig::default()).unwrap();
    assert_eq!(report.items[0].choice, 0);
    item.mode = Some(ScoringMode::Infill);
    let report = score_multiple_choice(&model, &[item], INFILL_SPECIALS, EOS, &EvalConfig::default()).unwrap();
    assert_eq!(report.items[0].choice, 0);
}

#[test]
fn infill_mode_rejects_multi_token_options() {
    let model = random_model(8);
    let mut item = mc_items().remove(0);
    item.mode = Some(ScoringMode::Infill);
    assert!(score_multiple_choice(&model, &[item], INFILL_SPECIALS, EOS, &EvalConfig::default()).is_err());
}

#[test]
fn mnli_template_is_populated_with_each_verbalizer() {
    let tok = TokenizerModel::train(["the cat sat, right? Yes, the cat is sitting".as_bytes()], 270).unwrap();
    let item = bidirlm::eval::mnli_item("the cat sat", "the cat is sitting", 0);
    let populated: Vec<String> = (0..3).map(|k| item.populated(k)).collect();
    assert_eq!(
        populated,
        [
            "the cat sat, right? Yes, the cat is sitting",
            "the cat sat, right? No, the cat is sitting",
            "the cat sat, right? Also, the cat is sitting"
        ]
    );
    let enc = item.encode(&tok).unwrap();
    assert_eq!(enc.options.len(), 3);
    let specials: SpecialTokens = tok.specials();
    let cfg = ModelConfig {
        layers: 1,
        d_model: 16,
        heads: 2,
        max_positions: 128,
        vocab_size: tok.vocab_size(),
        precision: Precision::F32,
    };
    let model = Params::<f32>::init(&cfg, 0).unwrap();
    let full = score_multiple_choice(&model, &[enc.clone()], specials, specials.eos, &EvalConfig::default()).unwrap();
    assert_eq!(full.items[0].scores.len(), 3);
    if enc.options.iter().all(|o| o.len() == 1) {
        let mut infill = enc;
        infill.mode = Some(ScoringMode::Infill);
        let r = score_multiple_choice(&model, &[infill], specials, specials.eos, &EvalConfig::default()).unwrap();
        assert_eq!(r.items[0].mode, ScoringMode::Infill);
    }
}

#[test]
fn mc_items_must_have_one_placeholder() {
    let bad = McItem { template: "no slot".into(), options: vec!["a".into(), "b".into()], gold: 0, mode: None };
    assert!(bad.validate().is_err());
    let ok = McItem { template: "x {} y".into(), options: vec!["a".into(), "b".into()], gold: 1, mode: None };
    assert!(ok.validate().is_ok());
}

#[test]
fn memorised_documents_are_recovered() {
    let docs = infill_corpus(4, 10, "memorise");
    let causal = memorised(&docs, Variant::NxtUni);
    let masked = memorised(&docs, Variant::MskBi);
    for doc in &docs {
        let pos = 8;
        let gold = doc.at(pos);
        let other = (gold + 1) % 29;
        let full = infill_full_scoring(&causal, doc, pos, &[other, gold], FullScope::Document, PAD).unwrap();
        assert_eq!(full.best, gold);
        assert_eq!(infill_direct(&masked, doc, pos, 1.0, INFILL_SPECIALS).unwrap().argmax, gold);
    }
    // Two-option task whose gold option is the memorised continuation.
    let items: Vec<EncodedMcItem> = docs
        .iter()
        .map(|d| {
            let t = d.tokens();
            let gold = t[10];
            EncodedMcItem {
                before: t[..10].to_vec(),
                options: vec![vec![(gold + 3) % 29], vec![gold]],
                after: t[11..t.len() - 1].to_vec(),
                gold: 1,
                mode: None,
            }
        })
        .collect();
    let report = score_multiple_choice(&causal, &items, INFILL_SPECIALS, EOS, &EvalConfig::default()).unwrap();
    assert_eq!(report.accuracy, 1.0);
}
