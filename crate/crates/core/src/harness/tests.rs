use std::sync::Arc;

use proptest::prelude::{any, prop, prop_assert, proptest, ProptestConfig};

use super::*;
use crate::benchgen::{gen_database, gen_workload, label_workload, GenConfig, IntRange};
use crate::cardest::ColumnPredicate;
use crate::cfg::build_udf_graph;
use crate::datastore::{Column, ColumnData, Database, SchemaSpec, Table};
use crate::plangraph::{PlanNode, PlanOp, UdfBinding};
use crate::udfscript::{parse_udf, CmpOp, UdfAst, UdfSource, Value};

/// r(id, a, s) and t(id, r_id, b) with three t rows per r row.
fn tiny_db() -> Database {
    let n = 20;
    let r = Table::new(
        "r",
        vec![
            Column::new("id", ColumnData::Int((0..n).map(Some).collect())),
            Column::new("a", ColumnData::Float((0..n).map(|i| Some(i as f64 - 5.0)).collect())),
            Column::new("s", ColumnData::String((0..n).map(|i| Some(format!("x{}", i % 4).into())).collect())),
        ],
    )
    .unwrap();
    let t = Table::new(
        "t",
        vec![
            Column::new("id", ColumnData::Int((0..3 * n).map(Some).collect())),
            Column::new("r_id", ColumnData::Int((0..3 * n).map(|i| Some(i % n)).collect())),
            Column::new("b", ColumnData::Int((0..3 * n).map(|i| if i % 7 == 0 { None } else { Some(i) }).collect())),
        ],
    )
    .unwrap();
    Database { schema: SchemaSpec { name: "tiny".into(), tables: Vec::new(), foreign_keys: Vec::new() }, tables: vec![r, t] }
}

fn tiny_udf(db: &Database) -> UdfAst {
    let src = UdfSource::from_text("def f(a: float):\n    if a > 0.0:\n        return a * 2.0\n    return a\n").unwrap();
    parse_udf(&src, &db.table("r").unwrap().schema()).unwrap()
}

fn binding() -> UdfBinding {
    UdfBinding { table: "r".into(), args: vec!["r.a".into()] }
}

fn join_body() -> PlanNode {
    PlanNode::join(PlanNode::scan("r"), PlanNode::scan("t"), "r.id", "t.r_id")
}

fn synthetic() -> ExecConfig {
    ExecConfig::with_mode(LabelMode::Synthetic)
}

#[test]
fn qerror_is_symmetric_and_rejects_non_positive() {
    assert_eq!(qerror(2.0, 1.0).unwrap(), 2.0);
    assert_eq!(qerror(1.0, 4.0).unwrap(), 4.0);
    assert_eq!(qerror(3.0, 3.0).unwrap(), 1.0);
    assert!(matches!(qerror(0.0, 1.0), Err(HarnessError::NonPositiveRuntime(_))));
    assert!(qerror(1.0, -1.0).is_err());
    assert!(qerror(f64::NAN, 1.0).is_err());
}

#[test]
fn percentiles_interpolate() {
    let v: Vec<f64> = (1..=5).map(f64::from).collect();
    assert_eq!(percentile(&v, 0.5), 3.0);
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 1.0), 5.0);
    assert!((percentile(&v, 0.95) - 4.8).abs() < 1e-12);
    let s = QStats::new(vec![5.0, 1.0, 3.0]);
    assert_eq!((s.count, s.median, s.max), (3, 3.0, 5.0));
}

#[test]
fn join_cardinalities_match_a_nested_loop_oracle() {
    let db = tiny_db();
    let mut terms = vec![ColumnPredicate::new("t.b", CmpOp::Ge, Value::Int(10))];
    let body = PlanNode::join(PlanNode::scan("r"), PlanNode::filter(PlanNode::scan("t"), terms.clone()), "r.id", "t.r_id");
    let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![body]));
    let res = execute(&plan, &db, None, &synthetic()).unwrap();

    let (r, t) = (db.table("r").unwrap(), db.table("t").unwrap());
    let pred = terms.pop().unwrap();
    let mut expected = 0;
    for i in 0..r.row_count {
        for j in 0..t.row_count {
            let b = t.column("b").unwrap().data.get(j);
            if r.column("id").unwrap().data.get(i) == t.column("r_id").unwrap().data.get(j) && pred.holds(&b) {
                expected += 1;
            }
        }
    }
    let t_pass = (0..t.row_count).filter(|&j| pred.holds(&t.column("b").unwrap().data.get(j))).count();
    let join = res.cards_at(&[0]).unwrap();
    assert_eq!(join.act_out, expected as f64);
    assert_eq!(join.act_in, (r.row_count + t_pass) as f64);
    assert_eq!(res.cards_at(&[0, 1]).unwrap().act_out, t_pass as f64);
    assert_eq!(res.cards_at(&[]).unwrap().act_out, expected as f64);
    assert_eq!(res.operators.len(), 5);
}

#[test]
fn udf_filter_placement_preserves_results() {
    let db = tiny_db();
    let ast = tiny_udf(&db);
    let pull = PlanTree::new(PlanNode::new(
        PlanOp::Output,
        vec![PlanNode::udf_filter(join_body(), binding(), CmpOp::Ge, Value::Float(4.0))],
    ));
    let push = crate::advisor::build_variant(&pull, Placement::PushDown).unwrap();
    let a = execute(&pull, &db, Some(&ast), &synthetic()).unwrap();
    let b = execute(&push, &db, Some(&ast), &synthetic()).unwrap();
    assert_eq!(a.checksum, b.checksum);
    assert_eq!(a.cards_at(&[]).unwrap().act_out, b.cards_at(&[]).unwrap().act_out);
    // a >= 4 after doubling positives: a in {2, 3, ..., 14}.
    assert_eq!(b.udf_rows, 20);
    assert_eq!(a.udf_rows, 60);
    assert_eq!(b.cards_at(&[]).unwrap().act_out, 13.0 * 3.0);
    assert!(a.runtime_seconds > b.runtime_seconds);
}

#[test]
fn missing_udf_and_unknown_columns_are_errors() {
    let db = tiny_db();
    let plan = PlanTree::new(PlanNode::new(
        PlanOp::Output,
        vec![PlanNode::udf_filter(PlanNode::scan("r"), binding(), CmpOp::Ge, Value::Float(0.0))],
    ));
    assert!(matches!(execute(&plan, &db, None, &synthetic()), Err(HarnessError::MissingUdf)));
    let bad = PlanTree::new(PlanNode::new(
        PlanOp::Output,
        vec![PlanNode::filter(PlanNode::scan("r"), vec![ColumnPredicate::new("r.zz", CmpOp::Ge, Value::Int(0))])],
    ));
    assert!(matches!(execute(&bad, &db, None, &synthetic()), Err(HarnessError::UnknownColumn(_))));
}

#[test]
fn udf_faults_name_the_operator_and_row() {
    let db = tiny_db();
    let src = UdfSource::from_text("def f(a: float):\n    return 1.0 / a\n").unwrap();
    let ast = parse_udf(&src, &db.table("r").unwrap().schema()).unwrap();
    let plan = PlanTree::new(PlanNode::new(
        PlanOp::Output,
        vec![PlanNode::udf_filter(PlanNode::scan("r"), binding(), CmpOp::Ge, Value::Float(0.0))],
    ));
    match execute(&plan, &db, Some(&ast), &synthetic()) {
        Err(HarnessError::Fault { operator, row, .. }) => assert_eq!((operator.as_str(), row), ("root.0", 5)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn aggregates() {
    let db = tiny_db();
    let agg = |func, column: Option<&str>, group_by: Vec<&str>| {
        let mut n = PlanNode::new(PlanOp::Agg, vec![PlanNode::scan("t")]);
        n.aggregate = Some(crate::plangraph::Aggregate {
            func,
            column: column.map(String::from),
            group_by: group_by.into_iter().map(String::from).collect(),
        });
        PlanTree::new(PlanNode::new(PlanOp::Output, vec![n]))
    };
    use crate::plangraph::AggFunc;
    let r = execute(&agg(AggFunc::Count, None, vec![]), &db, None, &synthetic()).unwrap();
    assert_eq!(r.cards_at(&[0]).unwrap().act_out, 1.0);
    let r = execute(&agg(AggFunc::Sum, Some("t.b"), vec!["t.r_id"]), &db, None, &synthetic()).unwrap();
    assert_eq!((r.cards_at(&[0]).unwrap().act_in, r.cards_at(&[0]).unwrap().act_out), (60.0, 20.0));

    // An ungrouped aggregate over no rows yields no rows.
    let mut empty = agg(AggFunc::Count, None, vec![]);
    let scan = std::mem::replace(&mut empty.root.children[0].children[0], PlanNode::scan("t"));
    empty.root.children[0].children[0] =
        PlanNode::filter(scan, vec![ColumnPredicate::new("t.b", CmpOp::Lt, Value::Int(-1))]);
    let r = execute(&empty, &db, None, &synthetic()).unwrap();
    assert_eq!(r.cards_at(&[0]).unwrap().act_out, 0.0);
}

#[test]
fn synthetic_labels_are_deterministic_and_follow_the_trace() {
    let db = tiny_db();
    let ast = tiny_udf(&db);
    let plan = PlanTree::new(PlanNode::new(
        PlanOp::Output,
        vec![PlanNode::udf_filter(PlanNode::scan("r"), binding(), CmpOp::Ge, Value::Float(0.0))],
    ));
    let a = execute(&plan, &db, Some(&ast), &synthetic()).unwrap();
    let b = execute(&plan, &db, Some(&ast), &synthetic()).unwrap();
    assert_eq!(a, b);

    // Independent recomputation: per-row UDF cost from the statement visits.
    let w = CostWeights::default();
    let g = crate::cardest::annotate_from_trace(&build_udf_graph(&ast), a.udf_trace.as_ref().unwrap(), 20.0);
    let mut plan_cost = w.base;
    for o in &a.operators {
        let idx = [PlanOp::Scan, PlanOp::Filter, PlanOp::Join, PlanOp::Agg, PlanOp::Output].iter().position(|p| *p == o.op);
        plan_cost += w.operator[idx.unwrap()] * (o.act_in + o.act_out);
    }
    let expected = plan_cost + udf_cost(&g, &w);
    assert!((a.runtime_seconds - expected).abs() < 1e-15);
    // 14 positive rows take the multiply, 6 do not.
    let ret_nodes: f64 = g.nodes.iter().filter(|n| n.kind == crate::cfg::NodeKind::Ret).map(|n| n.visits.unwrap()).sum();
    assert_eq!(ret_nodes, 20.0);
}

#[test]
fn measured_mode_reports_positive_times() {
    let db = tiny_db();
    let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![join_body()]));
    let cfg = ExecConfig { min_batch_seconds: 0.001, ..ExecConfig::with_mode(LabelMode::Measured) };
    let r = execute(&plan, &db, None, &cfg).unwrap();
    assert!(r.runtime_seconds > 0.0 && r.runtime_seconds < 1.0);
}

#[test]
fn udf_values_and_projection() {
    let db = tiny_db();
    let ast = tiny_udf(&db);
    let mut out = PlanNode::new(PlanOp::Output, vec![PlanNode::scan("r")]);
    out.udf_binding = Some(binding());
    let plan = PlanTree::new(out);
    let v = udf_values(&plan, &db, &ast).unwrap();
    assert_eq!(v.len(), 20);
    assert_eq!(v[0], Value::Float(-5.0));
    assert_eq!(v[19], Value::Float(28.0));
    let r = execute(&plan, &db, Some(&ast), &synthetic()).unwrap();
    assert_eq!(r.udf_rows, 20);
}

struct Constant(f64);

impl CostModel for Constant {
    fn predict(&self, _: &PlanTree, _: Option<&UdfGraph>, _: &[TableStats]) -> Result<f64, HarnessError> {
        Ok(self.0)
    }
}

fn eval_set() -> Vec<EvalQuery> {
    let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![PlanNode::scan("r")]));
    [(1.0, None), (2.0, Some(Placement::PullUp)), (4.0, Some(Placement::PushDown)), (0.5, Some(Placement::PushDown))]
        .into_iter()
        .enumerate()
        .map(|(i, (label, placement))| EvalQuery {
            query_id: i.to_string(),
            plan: plan.clone(),
            udf: None,
            catalog: Arc::new(Vec::new()),
            label,
            placement,
        })
        .collect()
}

#[test]
fn evaluate_buckets_by_placement() {
    let m = evaluate(&Constant(1.0), &eval_set()).unwrap();
    assert_eq!(m.q_errors, vec![1.0, 2.0, 4.0, 2.0]);
    assert_eq!(m.overall.count, 4);
    assert_eq!(m.by_placement.values().map(|s| s.count).sum::<usize>(), 4);
    assert_eq!(m.by_placement["push_down"].median, 3.0);
    assert!(!m.by_placement.contains_key("intermediate"));
    assert!(matches!(evaluate(&Constant(1.0), &[]), Err(HarnessError::EmptyWorkload)));
}

fn advisor_set(labels: &[(f64, f64)]) -> Vec<AdvisorQuery> {
    let db = tiny_db();
    let ast = tiny_udf(&db);
    let plan = PlanTree::new(PlanNode::new(
        PlanOp::Output,
        vec![PlanNode::udf_filter(join_body(), binding(), CmpOp::Ge, Value::Float(0.0))],
    ));
    labels
        .iter()
        .enumerate()
        .map(|(i, &(pull_up, push_down))| AdvisorQuery {
            query_id: i.to_string(),
            plan: plan.clone(),
            udf: build_udf_graph(&ast),
            catalog: Arc::new(Vec::new()),
            labels: Some(VariantLabels { pull_up, push_down }),
        })
        .collect()
}

#[test]
fn advisor_metrics_on_known_labels() {
    let qs = advisor_set(&[(1.0, 2.0), (3.0, 1.0), (2.0, 2.0)]);
    let m = evaluate_advisor(&qs, &FixedDecider(Placement::PullUp)).unwrap();
    assert_eq!(m.decider, "always-pull_up");
    assert_eq!(m.pull_up_decisions, 3);
    assert!((m.total_speedup - 5.0 / 6.0).abs() < 1e-12);
    assert!((m.false_positive_rate - 1.0 / 3.0).abs() < 1e-12);
    assert!((m.fp_impact - 2.0 / 6.0).abs() < 1e-12);
    assert_eq!(m.optimal_decisions, 2);
    assert!((m.optimal_total_speedup - 5.0 / 4.0).abs() < 1e-12);

    let base = evaluate_advisor(&qs, &FixedDecider(Placement::PushDown)).unwrap();
    assert_eq!((base.total_speedup, base.median_speedup, base.false_positive_rate), (1.0, 1.0, 0.0));

    for strategy in Strategy::ALL {
        let o = evaluate_advisor(&qs, &OracleDecider { strategy, grid: SelectivityGrid::default() }).unwrap();
        assert_eq!(o.optimal_decisions, 3, "{}", o.decider);
        assert_eq!(o.false_positive_rate, 0.0);
        assert!((o.total_speedup - o.optimal_total_speedup).abs() < 1e-12);
    }
}

#[test]
fn advisor_requires_both_labels() {
    let mut qs = advisor_set(&[(1.0, 2.0)]);
    qs[0].labels = None;
    assert!(matches!(
        evaluate_advisor(&qs, &FixedDecider(Placement::PushDown)),
        Err(HarnessError::MissingVariantLabel(_))
    ));
    let qs = advisor_set(&[(0.0, 2.0)]);
    assert!(matches!(evaluate_advisor(&qs, &FixedDecider(Placement::PushDown)), Err(HarnessError::NonPositiveRuntime(_))));
}

#[test]
fn generated_workloads_execute_with_conserved_cards() {
    let cfg = GenConfig { tables: IntRange::new(3, 4), rows: IntRange::new(200, 500), ..GenConfig::default() };
    let db = gen_database(&cfg, 31);
    let mut w = gen_workload(&cfg, &db, 12, 31, "db").unwrap();
    label_workload(&mut w.records, &w.db, LabelMode::Synthetic, true).unwrap();
    for r in &w.records {
        r.plan.root.visit(&mut |n| {
            let (i, o) = (n.cards.act_in.unwrap(), n.cards.act_out.unwrap());
            match n.op {
                PlanOp::Filter | PlanOp::Agg | PlanOp::Output => assert!(o <= i),
                PlanOp::Join => {
                    let (l, rr) = (n.children[0].cards.act_out.unwrap(), n.children[1].cards.act_out.unwrap());
                    assert_eq!(i, l + rr);
                    assert!(o <= l * rr);
                }
                PlanOp::Scan => assert_eq!(i, o),
            }
        });
        let trace = r.annotations.trace.as_ref().unwrap();
        assert!(trace.is_conserved(&parse_udf(&r.udf_source, &w.db.table(&r.udf_table).unwrap().schema()).unwrap()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qerror_is_at_least_one(a in 1e-9f64..1e6, b in 1e-9f64..1e6) {
        let q = qerror(a, b).unwrap();
        prop_assert!(q >= 1.0);
        prop_assert!((q - qerror(b, a).unwrap()).abs() <= 1e-12 * q);
    }

    #[test]
    fn percentiles_are_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 1..50), p in 0.0f64..1.0, d in 0.0f64..1.0) {
        v.sort_by(f64::total_cmp);
        let q = (p + d).min(1.0);
        prop_assert!(percentile(&v, p) <= percentile(&v, q) + 1e-9);
        prop_assert!(percentile(&v, p) >= v[0] && percentile(&v, p) <= v[v.len() - 1]);
    }

    #[test]
    fn speedups_never_beat_the_optimum(labels in prop::collection::vec((1e-3f64..10.0, 1e-3f64..10.0), 1..12), pull in any::<bool>()) {
        let qs = advisor_set(&labels);
        let p = if pull { Placement::PullUp } else { Placement::PushDown };
        let m = evaluate_advisor(&qs, &FixedDecider(p)).unwrap();
        prop_assert!(m.total_speedup <= m.optimal_total_speedup + 1e-12);
        prop_assert!(m.false_positive_rate >= 0.0 && m.false_positive_rate <= 1.0);
    }
}
