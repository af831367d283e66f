use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cardest::annotate_hit_ratios;
use crate::cfg::build_udf_graph;
use crate::datastore::{build_stats, sample_rows, Column, ColumnData, Table};
use crate::plangraph::{
    assemble_joint, featurize, CardMode, EncoderSpec, FeaturizedGraph, JointGraph, JointKind, PlanNode, PlanOp, PlanTree,
    UdfBinding,
};
use crate::udfscript::{parse_udf_text, CmpOp, Value};

/// Random DAG with typed nodes and random features; node `n - 1` is the
/// root and every other node feeds some later node.
fn random_graph(enc: &EncoderSpec, n: usize, rng: &mut impl Rng) -> FeaturizedGraph {
    let kinds: Vec<JointKind> = (0..n).map(|_| JointKind::ALL[rng.gen_range(0..JointKind::ALL.len())]).collect();
    let features = kinds.iter().map(|k| (0..enc.width(*k)).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let mut preds = vec![Vec::new(); n];
    for v in 0..n - 1 {
        let w = rng.gen_range(v + 1..n);
        preds[w].push(v);
        if rng.gen_bool(0.3) {
            let w2 = rng.gen_range(v + 1..n);
            if w2 != w {
                preds[w2].push(v);
            }
        }
    }
    for p in &mut preds {
        p.sort_unstable();
    }
    FeaturizedGraph { kinds, features, preds, order: (0..n).collect(), root: n - 1 }
}

fn joint(src: &str, threshold: f64) -> (JointGraph, EncoderSpec) {
    let t = Table::new(
        "t",
        vec![
            Column::new("a", ColumnData::Int((0..200).map(|i| Some(i % 17)).collect())),
            Column::new("b", ColumnData::Float((0..200).map(|i| Some(i as f64 * 0.25)).collect())),
        ],
    )
    .unwrap();
    let stats = build_stats(&t, 16);
    let g = build_udf_graph(&parse_udf_text(src, &t.schema()).unwrap());
    let g = annotate_hit_ratios(&g, &stats, &sample_rows(&t, 100, 3), 200.0).unwrap();
    let binding = UdfBinding { table: "t".into(), args: vec!["t.a".into(), "t.b".into()] };
    let f = PlanNode::udf_filter(PlanNode::scan("t"), binding, CmpOp::Gt, Value::Float(threshold));
    let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]));
    let j = assemble_joint(&plan, Some(&g), &[stats]).unwrap();
    let mut enc = EncoderSpec::new(CardMode::Estimated);
    enc.fit([&j]);
    (j, enc)
}

const LOOPY: &str = "def f(a: int, b: float):\n    s = 0.0\n    for i in range(a):\n        s = s + b * 2.0\n    if a > 3:\n        s = s - 1.0\n    elif b < 10.0:\n        s = s + 1.0\n    return s\n";

fn small_model(enc: &EncoderSpec, seed: u64) -> Model {
    init_model(&ModelConfig { hidden: 8 }, enc.clone(), seed).unwrap()
}

#[test]
fn init_is_seeded() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let a = small_model(&enc, 7);
    assert_eq!(a.params(), small_model(&enc, 7).params());
    assert_ne!(a.params(), small_model(&enc, 8).params());
    assert!(matches!(init_model(&ModelConfig { hidden: 0 }, enc, 1), Err(ModelError::Config(_))));
}

#[test]
fn forward_is_order_invariant() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let m = small_model(&enc, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(2..40);
        let fg = random_graph(&enc, n, &mut rng);
        let p = forward(&m, &fg).unwrap();
        assert!(p.runtime_seconds > 0.0);
        assert_eq!(p, forward(&m, &fg).unwrap());
        for _ in 0..5 {
            let order = fg.random_order(&mut rng);
            assert_eq!(p.log_runtime.to_bits(), m.forward_with_order(&fg, &order).unwrap().log_runtime.to_bits());
        }
    }
}

#[test]
fn join_predecessor_permutation_is_invisible() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let m = small_model(&enc, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let feat = |k: JointKind, rng: &mut ChaCha8Rng| (0..enc.width(k)).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (s1, s2, j) = (feat(JointKind::Scan, &mut rng), feat(JointKind::Scan, &mut rng), feat(JointKind::Join, &mut rng));
    let build = |first: Vec<f64>, second: Vec<f64>| FeaturizedGraph {
        kinds: vec![JointKind::Scan, JointKind::Scan, JointKind::Join],
        features: vec![first, second, j.clone()],
        preds: vec![vec![], vec![], vec![0, 1]],
        order: vec![0, 1, 2],
        root: 2,
    };
    let a = forward(&m, &build(s1.clone(), s2.clone())).unwrap();
    let b = forward(&m, &build(s2, s1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn encoder_mismatch_is_reported() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let m = small_model(&enc, 1);
    let mut fg = random_graph(&enc, 5, &mut ChaCha8Rng::seed_from_u64(1));
    fg.features[2].push(0.0);
    assert!(matches!(forward(&m, &fg), Err(ModelError::EncoderMismatch(_))));
}

#[test]
fn gradient_matches_finite_differences() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let m = init_model(&ModelConfig { hidden: 16 }, enc.clone(), seed).unwrap();
        let fg = random_graph(&enc, rng.gen_range(5..30), &mut rng);
        let dev = gradient_check(&m, &fg, 1e-4);
        assert!(dev <= 1e-3, "seed {seed}: {dev}");
    }
    let (j, enc) = joint(LOOPY, 3.0);
    let m = small_model(&enc, 3);
    assert!(gradient_check(&m, &featurize(&j, &enc), 1e-4) <= 1e-3);
}

#[test]
fn corrupted_gradient_is_caught() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let m = small_model(&enc, 4);
    let fg = random_graph(&enc, 12, &mut ChaCha8Rng::seed_from_u64(4));
    let dev = gradient_check_with(&m, &fg, 1e-4, |g| g.iter_mut().for_each(|x| *x *= 1.5));
    assert!(dev > 0.1, "{dev}");
}

#[test]
fn zero_model_has_dead_gradients() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let mut m = small_model(&enc, 1);
    m.params_mut().fill(0.0);
    let mut fg = random_graph(&enc, 6, &mut ChaCha8Rng::seed_from_u64(2));
    fg.features.iter_mut().for_each(|x| x.fill(0.0));
    let (loss, g) = m.loss_and_gradient(&fg, 2.0);
    assert!(loss > 0.0);
    // Only the output bias is live: every pre-activation is exactly zero.
    let live: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
    assert_eq!(live, [g.len() - 1]);
}

#[test]
fn memorizes_a_repeated_graph() {
    let (j, enc) = joint(LOOPY, 3.0);
    let fg = featurize(&j, &enc);
    let data: Vec<(FeaturizedGraph, f64)> = (0..20).map(|_| (fg.clone(), 0.37)).collect();
    let cfg = TrainConfig { epochs: 100, lr: 1e-2, batch_size: 4, ..TrainConfig::default() };
    let (m, hist) = train(&small_model(&enc, 1), &data, &cfg).unwrap();
    let last = hist.epochs.last().unwrap();
    assert!(last.val_loss.unwrap() < 1e-4, "{last:?}");
    assert!((forward(&m, &fg).unwrap().runtime_seconds - 0.37).abs() < 0.01);
}

#[test]
fn constant_labels_converge_to_constant() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<(FeaturizedGraph, f64)> = (0..30).map(|_| (random_graph(&enc, rng.gen_range(3..15), &mut rng), 1.5)).collect();
    let cfg = TrainConfig { epochs: 60, lr: 5e-3, batch_size: 8, ..TrainConfig::default() };
    let (m, hist) = train(&small_model(&enc, 2), &data, &cfg).unwrap();
    assert!(hist.epochs[hist.best_epoch].train_loss < 1e-3);
    for (fg, _) in &data {
        assert!((forward(&m, fg).unwrap().log_runtime - 1.5f64.ln()).abs() < 0.05);
    }
}

#[test]
fn training_loss_halves_on_fifty_samples() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<(FeaturizedGraph, f64)> = (0..50)
        .map(|_| {
            let fg = random_graph(&enc, rng.gen_range(3..20), &mut rng);
            let y = (fg.features[fg.root].iter().sum::<f64>() * 0.5 + fg.len() as f64 * 0.1).exp();
            (fg, y)
        })
        .collect();
    let cfg = TrainConfig { epochs: 200, val_fraction: 0.0, patience: 200, ..TrainConfig::default() };
    let (_, hist) = train(&init_model(&ModelConfig { hidden: 16 }, enc, 0).unwrap(), &data, &cfg).unwrap();
    let first = hist.epochs[0].train_loss;
    let best = hist.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best <= 0.5 * first, "{first} -> {best}");
}

#[test]
fn training_is_deterministic() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<(FeaturizedGraph, f64)> =
        (0..24).map(|_| (random_graph(&enc, rng.gen_range(3..10), &mut rng), rng.gen_range(0.01..3.0))).collect();
    let cfg = TrainConfig { epochs: 5, batch_size: 5, ..TrainConfig::default() };
    let (a, ha) = train(&small_model(&enc, 5), &data, &cfg).unwrap();
    let (b, hb) = train(&small_model(&enc, 5), &data, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}

#[test]
fn train_rejects_bad_input() {
    let enc = EncoderSpec::new(CardMode::Actual);
    let m = small_model(&enc, 1);
    assert!(matches!(train(&m, &[], &TrainConfig::default()), Err(ModelError::EmptyDataset)));
    let fg = random_graph(&enc, 3, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(matches!(train(&m, &[(fg.clone(), 0.0)], &TrainConfig::default()), Err(ModelError::NonPositiveLabel(_))));
    let cfg = TrainConfig { lr: 1e300, epochs: 3, ..TrainConfig::default() };
    let data = vec![(fg.clone(), 1.0), (fg, 100.0)];
    assert!(matches!(train(&m, &data, &cfg), Err(ModelError::NonFiniteLoss { .. }) | Ok(_)));
}

#[test]
fn checkpoint_round_trip() {
    let (j, enc) = joint(LOOPY, 1.0);
    let mut m = small_model(&enc, 6);
    m.target = TargetNorm { mean: -2.5, std: 0.75 };
    let text = serde_json::to_string(&m.to_json()).unwrap();
    let back = Model::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    let fg = featurize(&j, &enc);
    assert_eq!(forward(&m, &fg).unwrap(), forward(&back, &fg).unwrap());
    assert_eq!(m, back);

    let mut doc = m.to_json();
    doc["version"] = serde_json::json!(MODEL_VERSION + 1);
    assert!(matches!(Model::from_json(&doc), Err(ModelError::Checkpoint(_))));
    let mut doc = m.to_json();
    doc["tensors"][0]["shape"] = serde_json::json!([1, 1]);
    assert!(matches!(Model::from_json(&doc), Err(ModelError::Checkpoint(_))));
}

#[test]
fn flat_vector_counts() {
    let (j, enc) = joint(LOOPY, 3.0);
    let x = flat_featurize(&j, &enc);
    assert_eq!(x.len(), flat_slot_names(&enc).len());
    let slot = |n: &str| x[flat_slot(&enc, n).unwrap()];
    assert_eq!(slot("loops"), 1.0);
    assert_eq!(slot("branches"), 2.0);
    assert_eq!(slot("invocations"), 1.0);
    assert_eq!(slot("scans"), 1.0);
    assert_eq!(slot("filters"), 1.0);
    assert_eq!(slot("udf_rows"), 200.0);
    assert_eq!(x, flat_featurize(&j, &enc));

    let (j, enc) = joint("def f(a: int, b: float):\n    return a\n", 3.0);
    let x = flat_featurize(&j, &enc);
    let udf_structure: f64 = x[1..flat_slot(&enc, "udf_rows").unwrap()].iter().sum();
    assert_eq!(udf_structure, 0.0);
    assert_eq!(x[0], 1.0);
}

#[test]
fn flat_gradient_and_training() {
    let (j, enc) = joint(LOOPY, 3.0);
    let x = flat_featurize(&j, &enc);
    let m = init_flat_model(8, enc.clone(), 1).unwrap();
    let (_, g) = m.loss_and_gradient(&x, 0.2);
    let eps = 1e-5;
    for i in (0..g.len()).step_by(7) {
        let mut p = m.clone();
        p.params_mut()[i] += eps;
        let lp = p.loss_and_gradient(&x, 0.2).0;
        p.params_mut()[i] -= 2.0 * eps;
        let lm = p.loss_and_gradient(&x, 0.2).0;
        let num = (lp - lm) / (2.0 * eps);
        assert!((num - g[i]).abs() <= 1e-5 * (1.0 + num.abs()), "{i}: {num} vs {}", g[i]);
    }
    let rows = flat_slot(&enc, "udf_rows").unwrap();
    let data: Vec<(Vec<f64>, f64)> = (1..40)
        .map(|k| {
            let mut v = x.clone();
            v[rows] = k as f64 * 50.0;
            (v, 1e-4 * k as f64 * 50.0 + 0.01)
        })
        .collect();
    let cfg = TrainConfig { epochs: 200, lr: 1e-2, batch_size: 8, ..TrainConfig::default() };
    let (fm, hist) = flat_train(&m, &data, &cfg).unwrap();
    assert!(hist.epochs[hist.best_epoch].train_loss < 0.05 * hist.epochs[0].train_loss.max(1e-9) + 1e-3);
    let back = FlatModel::from_json(&fm.to_json()).unwrap();
    assert_eq!(flat_forward(&fm, &data[3].0).unwrap(), flat_forward(&back, &data[3].0).unwrap());
}
