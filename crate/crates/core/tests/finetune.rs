use bidirlm::finetune::{
    accuracy, classify, classify_logits, finetune, finetune_cell, ClsDataset, ClsExample, FinetuneGrid,
};
use bidirlm::model::{ModelConfig, Params};
use bidirlm::scalar::Precision;
use bidirlm::seed::substream;
use bidirlm::synthetic::{separable_task, INFILL_SPECIALS, INFILL_VOCAB};
use rand::seq::SliceRandom;

const EOS: u32 = INFILL_SPECIALS.eos;
const PAD: u32 = INFILL_SPECIALS.pad;

fn base<T: bidirlm::scalar::Scalar>(precision: Precision) -> Params<T> {
    let cfg = ModelConfig { layers: 1, d_model: 32, heads: 2, max_positions: 32, vocab_size: INFILL_VOCAB, precision };
    Params::init(&cfg, 3).unwrap()
}

fn split(count: usize, name: &str) -> Vec<ClsExample> {
    separable_task(count, 5, name)
        .into_iter()
        .map(|t| ClsExample::from_tokens(t.tokens, t.label, EOS, 32).unwrap())
        .collect()
}

fn grid(updates: u64) -> FinetuneGrid {
    FinetuneGrid {
        learning_rates: vec![1e-3],
        batch_sizes: vec![16],
        r_bidirs: vec![0.0],
        updates,
        ..FinetuneGrid::default()
    }
}

#[test]
fn shuffled_labels_stay_near_the_majority_rate() {
    let mut train = split(200, "train");
    let mut labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    labels.shuffle(&mut substream(1, "labels"));
    for (e, l) in train.iter_mut().zip(labels) {
        e.label = l;
    }
    let data = ClsDataset::new(train, split(200, "dev")).unwrap();
    let model = finetune_cell(&base::<f32>(Precision::F32), &data, &grid(150), 1e-3, 16, 0.0, PAD).unwrap();
    let acc = accuracy(&model, &data.dev, 0.0, PAD).unwrap();
    assert!((acc - data.majority_rate()).abs() < 0.15, "accuracy {acc} vs majority {}", data.majority_rate());
}

#[test]
fn true_labels_are_learned() {
    let data = ClsDataset::new(split(200, "train"), split(100, "dev")).unwrap();
    for r in [0.0, 1.0] {
        let model = finetune_cell(&base::<f32>(Precision::F32), &data, &grid(150), 1e-3, 16, r, PAD).unwrap();
        assert!(accuracy(&model, &data.dev, r, PAD).unwrap() >= 0.95);
    }
}

#[test]
fn double_precision_fine_tuning_is_deterministic() {
    let data = ClsDataset::new(split(40, "train"), split(20, "dev")).unwrap();
    let run = || finetune_cell(&base::<f64>(Precision::F64), &data, &grid(5), 1e-3, 8, 1.0, PAD).unwrap();
    assert_eq!(run().checksum(true), run().checksum(true));
}

#[test]
fn padding_does_not_change_a_prediction() {
    let data = ClsDataset::new(split(40, "train"), split(20, "dev")).unwrap();
    let model = finetune_cell(&base::<f64>(Precision::F64), &data, &grid(5), 1e-3, 8, 0.5, PAD).unwrap();
    let short = &data.dev[0];
    let long = data.dev.iter().max_by_key(|e| e.tokens.len()).unwrap();
    assert!(long.tokens.len() > short.tokens.len());
    let alone = classify_logits(&model, &[short], 0.5, PAD).unwrap();
    let batched = classify_logits(&model, &[long, short], 0.5, PAD).unwrap();
    for (a, b) in alone.row(0).iter().zip(batched.row(1)) {
        assert!((a - b).abs() < 1e-10);
    }
    let c = classify(&model, &short.tokens, 0.5, PAD).unwrap();
    assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn grid_best_is_the_table_maximum() {
    let data = ClsDataset::new(split(60, "train"), split(30, "dev")).unwrap();
    let g = FinetuneGrid {
        learning_rates: vec![1e-4, 1e-3],
        batch_sizes: vec![8],
        r_bidirs: vec![0.0, 1.0],
        updates: 20,
        ..FinetuneGrid::default()
    };
    let report = finetune(&base::<f32>(Precision::F32), &data, &g, PAD).unwrap();
    assert_eq!(report.cells.len(), 4);
    let max = report.cells.iter().map(|c| c.dev_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(report.best.dev_accuracy, max);
    let first = report.cells.iter().find(|c| c.dev_accuracy == max).unwrap();
    assert_eq!(&report.best, first);
}

#[test]
fn a_base_with_a_head_is_refused() {
    let data = ClsDataset::new(split(10, "train"), split(10, "dev")).unwrap();
    let mut b = base::<f32>(Precision::F32);
    b.attach_head(2, 0).unwrap();
    assert!(finetune(&b, &data, &grid(1), PAD).is_err());
}

#[test]
fn truncation_keeps_the_final_eos() {
    let e = ClsExample::from_tokens((0..40).collect(), 1, EOS, 10).unwrap();
    assert_eq!(e.tokens.len(), 10);
    assert_eq!(*e.tokens.last().unwrap(), EOS);
    assert_eq!(&e.tokens[..9], &(0..9).collect::<Vec<u32>>()[..]);
}
