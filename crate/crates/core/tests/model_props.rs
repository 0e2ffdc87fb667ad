use bidirlm::data::Document;
use bidirlm::model::{CheckpointMeta, ModelConfig, Params};
use bidirlm::objective::{pack, transform, PackedBatch, PackedSequence, TransformPlan};
use bidirlm::scalar::Precision;
use proptest::prelude::*;

const VOCAB: usize = 24;
const MASK: u32 = 21;
const EOS: u32 = 22;
const PAD: u32 = 23;

fn small(precision: Precision) -> ModelConfig {
    ModelConfig { layers: 2, d_model: 32, heads: 4, max_positions: 48, vocab_size: VOCAB, precision }
}

fn doc(tokens: &[u32]) -> Document {
    let mut t = tokens.to_vec();
    t.push(EOS);
    Document::new(t, EOS, "m").unwrap()
}

fn padded(plan: &TransformPlan, d: &Document, len: usize) -> PackedSequence {
    PackedSequence::from_example(&transform(d, plan, MASK).unwrap(), len, PAD).unwrap()
}

fn max_diff(a: ndarray::ArrayView2<f64>, b: ndarray::ArrayView2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trailing_pad_does_not_move_content_logits(
        tokens in prop::collection::vec(0u32..20, 2..20),
        extra in 1usize..10,
        frac in 0.0f64..=1.0,
    ) {
        let params = Params::<f64>::init(&small(Precision::F64), 1).unwrap();
        let d = doc(&tokens);
        let n = d.len();
        let nb = (frac * n as f64) as usize;
        let plan = TransformPlan::new(n, vec![], nb, n - nb).unwrap();
        let tight = params.forward(&PackedBatch::new(n, vec![padded(&plan, &d, n)]).unwrap()).unwrap();
        let loose = params.forward(&PackedBatch::new(n + extra, vec![padded(&plan, &d, n + extra)]).unwrap()).unwrap();
        prop_assert!(max_diff(tight.view(), loose.slice(ndarray::s![..n, ..])) < 1e-10);
    }

    #[test]
    fn rows_of_a_batch_are_independent(
        a in prop::collection::vec(0u32..20, 2..16),
        b in prop::collection::vec(0u32..20, 2..16),
    ) {
        let params = Params::<f64>::init(&small(Precision::F64), 2).unwrap();
        let (da, db) = (doc(&a), doc(&b));
        let len = da.len().max(db.len());
        let alone = params
            .forward(&PackedBatch::new(len, vec![padded(&TransformPlan::causal(da.len()), &da, len)]).unwrap())
            .unwrap();
        let both = params
            .forward(
                &PackedBatch::new(
                    len,
                    vec![
                        padded(&TransformPlan::causal(da.len()), &da, len),
                        padded(&TransformPlan::causal(db.len()), &db, len),
                    ],
                )
                .unwrap(),
            )
            .unwrap();
        let n = da.len();
        prop_assert!(max_diff(alone.slice(ndarray::s![..n, ..]), both.slice(ndarray::s![..n, ..])) < 1e-10);
    }

    #[test]
    fn a_later_packed_document_does_not_affect_an_earlier_one(
        a in prop::collection::vec(0u32..20, 2..16),
        b in prop::collection::vec(0u32..20, 2..16),
    ) {
        let params = Params::<f64>::init(&small(Precision::F64), 3).unwrap();
        let (da, db) = (doc(&a), doc(&b));
        let ea = transform(&da, &TransformPlan::new(da.len(), vec![], da.len() - 1, 1).unwrap(), MASK).unwrap();
        let eb = transform(&db, &TransformPlan::causal(db.len()), MASK).unwrap();
        let len = ea.len() + eb.len();
        let packed = pack([&ea, &eb], len, PAD).unwrap();
        prop_assert_eq!(packed.len(), 1);
        let together = params.forward(&PackedBatch::new(len, packed).unwrap()).unwrap();
        let alone = params
            .forward(&PackedBatch::new(ea.len(), vec![PackedSequence::from_example(&ea, ea.len(), PAD).unwrap()]).unwrap())
            .unwrap();
        prop_assert!(max_diff(alone.view(), together.slice(ndarray::s![..ea.len(), ..])) < 1e-10);
    }
}

#[test]
fn single_and_double_precision_agree() {
    let p64 = Params::<f64>::init(&small(Precision::F64), 4).unwrap();
    let p32: Params<f32> = p64.cast();
    let d = doc(&[3, 1, 4, 1, 5, 9, 2, 6]);
    let plan = TransformPlan::new(d.len(), vec![2, 5], 3, 6).unwrap();
    let batch = PackedBatch::new(d.len(), vec![padded(&plan, &d, d.len())]).unwrap();
    let a = p64.forward(&batch).unwrap();
    let b = p32.forward(&batch).unwrap().mapv(f64::from);
    assert!(max_diff(a.view(), b.view()) < 1e-4);
}

#[test]
fn checkpoints_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Params::<f32>::init(&small(Precision::F32), 5).unwrap();
    p.attach_head(3, 5).unwrap();
    let path = dir.path().join("m.ckpt");
    p.save(&path, CheckpointMeta { step: 7, tokens: 700 }).unwrap();
    let (q, meta) = Params::<f32>::load(&path).unwrap();
    assert_eq!(q, p);
    assert_eq!((meta.step, meta.tokens), (7, 700));
    assert_eq!(q.checksum(true), p.checksum(true));
    assert_ne!(q.checksum(true), q.checksum(false));
}

#[test]
fn initialisation_is_seeded() {
    let a = Params::<f32>::init(&small(Precision::F32), 6).unwrap();
    let b = Params::<f32>::init(&small(Precision::F32), 6).unwrap();
    let c = Params::<f32>::init(&small(Precision::F32), 7).unwrap();
    assert_eq!(a.checksum(false), b.checksum(false));
    assert_ne!(a.checksum(false), c.checksum(false));
    assert_eq!(a.num_parameters(), small(Precision::F32).param_count());
}

#[test]
fn sequences_longer_than_the_position_table_are_rejected() {
    let p = Params::<f32>::init(&small(Precision::F32), 8).unwrap();
    let tokens: Vec<u32> = (0..60).map(|i| i % 20).collect();
    let d = doc(&tokens);
    let batch = PackedBatch::new(d.len(), vec![padded(&TransformPlan::causal(d.len()), &d, d.len())]).unwrap();
    assert!(p.forward(&batch).is_err());
}

#[test]
fn unused_position_rows_get_no_gradient() {
    let p = Params::<f64>::init(&small(Precision::F64), 9).unwrap();
    let d = doc(&[1, 2, 3, 4, 5, 6]);
    let batch = PackedBatch::new(d.len(), vec![padded(&TransformPlan::new(d.len(), vec![2], 0, 7).unwrap(), &d, d.len())]).unwrap();
    let (_, grads) = p.loss_and_grad(&batch).unwrap();
    let pos = &grads[bidirlm::model::params::POS_EMB];
    assert!(pos.rows().into_iter().take(d.len()).any(|r| r.iter().any(|&g| g != 0.0)));
    assert!(pos.rows().into_iter().skip(d.len()).all(|r| r.iter().all(|&g| g == 0.0)));
    // Tied embeddings: every token row is reached through the output softmax.
    let tok = &grads[bidirlm::model::params::TOK_EMB];
    assert!(tok.rows().into_iter().all(|r| r.iter().any(|&g| g != 0.0)));
}
