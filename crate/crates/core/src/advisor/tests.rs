use proptest::prelude::{any, prop, prop_assert_eq, proptest, ProptestConfig};

use super::*;
use crate::cardest::annotate_hit_ratios;
use crate::cfg::build_udf_graph;
use crate::datastore::{build_stats, sample_rows, Column, ColumnData, Table};
use crate::model::{init_model, ModelConfig, TargetNorm};
use crate::plangraph::{estimate_cards, Aggregate, AggFunc, CardMode, EncoderSpec, UdfBinding};
use crate::udfscript::{parse_udf_text, CmpOp, Value};

fn dist(v: &[f64]) -> CostDistribution {
    CostDistribution { points: SelectivityGrid::default().values().iter().copied().zip(v.iter().copied()).collect() }
}

fn binding() -> UdfBinding {
    UdfBinding { table: "a".into(), args: vec!["a.x".into()] }
}

/// output <- udf_filter <- join(join(scan a, scan b), scan c)
fn two_join_plan() -> PlanTree {
    let ab = PlanNode::join(PlanNode::scan("a"), PlanNode::scan("b"), "a.id", "b.a_id");
    let abc = PlanNode::join(ab, PlanNode::scan("c"), "b.id", "c.b_id");
    let f = PlanNode::udf_filter(abc, binding(), CmpOp::Gt, Value::Float(0.0));
    PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]))
}

fn catalog() -> (Vec<Table>, Vec<TableStats>) {
    let int = |n: i64, f: fn(i64) -> i64| ColumnData::Int((0..n).map(|i| Some(f(i))).collect());
    let a = Table::new("a", vec![Column::new("id", int(100, |i| i)), Column::new("x", int(100, |i| i % 7))]).unwrap();
    let b = Table::new("b", vec![Column::new("id", int(300, |i| i)), Column::new("a_id", int(300, |i| i % 100))]).unwrap();
    let c = Table::new("c", vec![Column::new("id", int(50, |i| i)), Column::new("b_id", int(50, |i| i * 3))]).unwrap();
    let stats = vec![build_stats(&a, 16), build_stats(&b, 16), build_stats(&c, 16)];
    (vec![a, b, c], stats)
}

fn udf(tables: &[Table], stats: &[TableStats]) -> UdfGraph {
    let src = "def f(x: int):\n    y = x * 2\n    if x < 3:\n        y = y + 1\n    return y\n";
    let g = build_udf_graph(&parse_udf_text(src, &tables[0].schema()).unwrap());
    annotate_hit_ratios(&g, &stats[0], &sample_rows(&tables[0], 100, 1), 1.0).unwrap()
}

#[test]
fn grid_validation() {
    assert!(SelectivityGrid::new(vec![0.1, 0.5, 1.0]).is_ok());
    assert!(SelectivityGrid::new(vec![0.5, 0.5]).is_err());
    assert!(SelectivityGrid::new(vec![0.0, 0.5]).is_err());
    assert!(SelectivityGrid::new(vec![0.5, 1.1]).is_err());
    assert!(SelectivityGrid::new(vec![]).is_err());
    assert_eq!(SelectivityGrid::default().values(), &[0.1, 0.3, 0.5, 0.7, 0.9, 1.0]);
}

#[test]
fn decision_examples() {
    let same = dist(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    for s in Strategy::ALL {
        assert_eq!(decide(&same, &same, s).unwrap().choice, Placement::PushDown);
    }
    let one = dist(&[1.0; 6]);
    let two = dist(&[2.0; 6]);
    for s in Strategy::ALL {
        assert_eq!(decide(&one, &two, s).unwrap().choice, Placement::PullUp);
    }

    // Pull-up cheaper up to 0.5, dearer from 0.7 on.
    let pull = dist(&[1.0, 1.0, 1.0, 3.0, 3.0, 3.0]);
    let push = dist(&[2.0; 6]);
    assert_eq!(decide(&pull, &push, Strategy::Conservative).unwrap().choice, Placement::PushDown);
    assert_eq!(decide(&pull, &push, Strategy::Ubc).unwrap().choice, Placement::PushDown);
    // Areas: pull = 0.2 + 0.2 + 0.4 + 0.6 + 0.3 = 1.7, push = 0.9 * 2 = 1.8.
    assert!((pull.area() - 1.7).abs() < 1e-12);
    assert!((push.area() - 1.8).abs() < 1e-12);
    assert_eq!(decide(&pull, &push, Strategy::Auc).unwrap().choice, Placement::PullUp);

    let short = CostDistribution { points: vec![(0.5, 1.0)] };
    assert!(matches!(decide(&short, &push, Strategy::Ubc), Err(AdvisorError::GridMismatch)));
}

fn arb_pair() -> impl proptest::strategy::Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (prop::collection::vec(1e-4..1e3f64, 6), prop::collection::vec(1e-4..1e3f64, 6), 1e-3..1e3f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn strategy_properties((a, b, c) in arb_pair(), use_equal in any::<bool>()) {
        let pull = dist(&a);
        let push = if use_equal { pull.clone() } else { dist(&b) };
        let cons = decide(&pull, &push, Strategy::Conservative).unwrap().choice;
        let ubc = decide(&pull, &push, Strategy::Ubc).unwrap().choice;
        if cons == Placement::PullUp {
            prop_assert_eq!(ubc, Placement::PullUp);
        }
        if use_equal {
            for s in Strategy::ALL {
                prop_assert_eq!(decide(&pull, &push, s).unwrap().choice, Placement::PushDown);
            }
        }
        for s in Strategy::ALL {
            let d = decide(&pull, &push, s).unwrap().choice;
            prop_assert_eq!(decide(&pull.scaled(c), &push.scaled(c), s).unwrap().choice, d);
        }
    }
}

#[test]
fn push_down_is_idempotent_at_scan() {
    let f = PlanNode::udf_filter(PlanNode::scan("a"), binding(), CmpOp::Gt, Value::Float(0.0));
    let ab = PlanNode::join(f, PlanNode::scan("b"), "a.id", "b.a_id");
    let mut plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![ab]));
    plan.root.cards.act_out = Some(12.0);
    assert_eq!(build_variant(&plan, Placement::PushDown).unwrap(), plan);
}

#[test]
fn pull_up_above_both_joins() {
    let (_, stats) = catalog();
    let mut plan = two_join_plan();
    estimate_cards(&mut plan, &stats).unwrap();
    let down = build_variant(&plan, Placement::PushDown).unwrap();
    assert_eq!(down.udf_path(), Some(vec![0, 0, 0]));
    assert_eq!(down.node(&[0, 0, 0, 0]).op, PlanOp::Scan);
    assert_eq!(down.node(&[0, 0, 0]).cards.est_in, Some(100.0));
    let up = build_variant(&down, Placement::PullUp).unwrap();
    assert_eq!(up.udf_path(), Some(vec![0]));
    assert_eq!(up.node(&[0, 0]).count_joins(), 2);
    assert_eq!(up, plan);

    let mid = build_variant(&down, Placement::Intermediate).unwrap();
    assert_eq!(mid.udf_path(), Some(vec![0, 0]));
    assert_eq!(mid.node(&[0, 0, 0]).op, PlanOp::Join);

    // Under an aggregate the pulled-up filter sits below the AGG.
    let mut agg = PlanNode::new(PlanOp::Agg, vec![down.root.children[0].clone()]);
    agg.aggregate = Some(Aggregate { func: AggFunc::Count, column: None, group_by: vec![] });
    let with_agg = PlanTree::new(PlanNode::new(PlanOp::Output, vec![agg]));
    let up = build_variant(&with_agg, Placement::PullUp).unwrap();
    assert_eq!(up.udf_path(), Some(vec![0, 0]));
    assert_eq!(up.node(&[0]).op, PlanOp::Agg);
}

trait CountJoins {
    fn count_joins(&self) -> usize;
}

impl CountJoins for PlanNode {
    fn count_joins(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += usize::from(p.op == PlanOp::Join));
        n
    }
}

#[test]
fn projection_udf_has_no_filter() {
    let mut out = PlanNode::new(PlanOp::Output, vec![PlanNode::scan("a")]);
    out.udf_binding = Some(binding());
    let plan = PlanTree::new(out);
    assert!(matches!(build_variant(&plan, Placement::PullUp), Err(AdvisorError::NoUdfFilter)));
    let plain = PlanTree::new(PlanNode::new(PlanOp::Output, vec![PlanNode::scan("a")]));
    assert!(matches!(reannotate(&plain, 0.5), Err(AdvisorError::NoUdfFilter)));
}

#[test]
fn reannotation_scales_once() {
    let (_, stats) = catalog();
    let mut plan = two_join_plan();
    let down = {
        estimate_cards(&mut plan, &stats).unwrap();
        build_variant(&plan, Placement::PushDown).unwrap()
    };
    assert_eq!(reannotate(&down, 1.0).unwrap(), down);
    let half = reannotate(&down, 0.5).unwrap();
    let f = half.node(&[0, 0, 0]);
    assert_eq!(f.cards.est_in, Some(100.0));
    assert_eq!(f.cards.est_out, Some(50.0));
    for path in [&[][..], &[0], &[0, 0]] {
        let (a, b) = (down.node(path).cards, half.node(path).cards);
        assert_eq!(b.est_out.unwrap(), a.est_out.unwrap() * 0.5, "{path:?}");
        assert_eq!(b.est_in.unwrap(), a.est_in.unwrap() * 0.5, "{path:?}");
    }
    // Siblings and descendants of the filter are untouched.
    assert_eq!(half.node(&[0, 0, 1]), down.node(&[0, 0, 1]));
    assert_eq!(half.node(&[0, 1]), down.node(&[0, 1]));
    assert_eq!(half.node(&[0, 0, 0, 0]), down.node(&[0, 0, 0, 0]));
}

#[test]
fn pass_through_output_scales_to_half() {
    let mut f = PlanNode::udf_filter(PlanNode::scan("a"), binding(), CmpOp::Gt, Value::Float(0.0));
    f.cards.est_in = Some(1000.0);
    f.cards.est_out = Some(1000.0);
    let mut out = PlanNode::new(PlanOp::Output, vec![f]);
    out.cards.est_in = Some(1000.0);
    out.cards.est_out = Some(1000.0);
    let p = reannotate(&PlanTree::new(out), 0.5).unwrap();
    assert_eq!(p.root.cards.est_out, Some(500.0));
}

#[test]
fn constant_model_gives_flat_distribution() {
    let (tables, stats) = catalog();
    let g = udf(&tables, &stats);
    let mut plan = two_join_plan();
    estimate_cards(&mut plan, &stats).unwrap();
    let mut enc = EncoderSpec::new(CardMode::Estimated);
    enc.fit(std::iter::empty());
    let mut m = init_model(&ModelConfig { hidden: 4 }, enc.clone(), 0).unwrap();
    m.params_mut().fill(0.0);
    m.target = TargetNorm { mean: 0.25f64.ln(), std: 1.0 };
    let d = cost_distribution(&m, &plan, &g, &SelectivityGrid::default(), &stats).unwrap();
    assert_eq!(d.points.len(), 6);
    assert!(d.points.iter().all(|p| (p.1 - 0.25).abs() < 1e-12));

    let five = SelectivityGrid::new(vec![0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
    let trained = init_model(&ModelConfig { hidden: 8 }, enc, 3).unwrap();
    let a = cost_distribution(&trained, &plan, &g, &five, &stats).unwrap();
    assert_eq!(a.points.len(), 5);
    assert_eq!(a, cost_distribution(&trained, &plan, &g, &five, &stats).unwrap());
    assert!(a.points.windows(2).any(|w| w[0].1 != w[1].1));

    let advice = advise(&trained, &plan, &g, &SelectivityGrid::default(), &stats).unwrap();
    assert_eq!(advice.decisions.len(), 3);
}
