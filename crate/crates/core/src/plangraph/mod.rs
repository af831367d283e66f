//! Query plans, the joint query/UDF graph and its featurization.
//!
//! Plan JSON (version 1): `{"version": 1, "root": <operator>}` where an
//! operator is an object with
//! - `op`: `scan | filter | join | agg | output`
//! - `children`: operators (scan 0, join 2, others 1)
//! - `table`: scanned table (scan only)
//! - `predicate`: `{"kind": "conjunction", "terms": [{"column", "cmp", "value"}]}`,
//!   `{"kind": "equi", "left", "right"}` (join) or
//!   `{"kind": "udf", "cmp", "threshold"}` (UDF filter)
//! - `aggregate`: `{"func", "column"?, "group_by"?}` (agg only)
//! - `udf_binding`: `{"table", "args"}` on the filter or output invoking the UDF
//! - `cards`: `{"est_in"?, "est_out"?, "act_in"?, "act_out"?}`
//!
//! Columns are written `table.column`.

mod features;
mod joint;
mod plan;

use thiserror::Error;

pub use features::{featurize, EncoderSpec, FeaturizedGraph, NormStats, Vocab, Vocabularies, ENCODER_VERSION, UNK};
pub use joint::{assemble_joint, JointFeatures, JointGraph, JointKind, JointNode};
pub use plan::{
    estimate_cards, parse_plan, split_column, AggFunc, Aggregate, CardMode, Cards, PlanNode, PlanOp, PlanPath,
    PlanTree, Predicate, UdfBinding, PLAN_VERSION,
};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid plan at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("invalid UDF binding: {0}")]
    InvalidBinding(String),
}

impl PlanError {
    pub(crate) fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        PlanError::Schema { path: path.into(), msg: msg.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cardest::{annotate_hit_ratios, ColumnPredicate};
    use crate::cfg::build_udf_graph;
    use crate::datastore::{build_stats, sample_rows, Column, ColumnData, Table, TableStats};
    use crate::udfscript::{parse_udf_text, CmpOp, Value};

    fn catalog() -> (Vec<Table>, Vec<TableStats>) {
        let t = Table::new(
            "t",
            vec![
                Column::new("id", ColumnData::Int((0..100).map(Some).collect())),
                Column::new("a", ColumnData::Int((0..100).map(|i| Some(i % 10)).collect())),
                Column::new("b", ColumnData::Float((0..100).map(|i| Some(i as f64 / 3.0)).collect())),
            ],
        )
        .unwrap();
        let u = Table::new(
            "u",
            vec![
                Column::new("id", ColumnData::Int((0..20).map(Some).collect())),
                Column::new("t_id", ColumnData::Int((0..20).map(|i| Some(i * 5)).collect())),
            ],
        )
        .unwrap();
        let stats = vec![build_stats(&t, 16), build_stats(&u, 16)];
        (vec![t, u], stats)
    }

    fn udf(tables: &[Table], stats: &[TableStats]) -> crate::cfg::UdfGraph {
        let src = "def f(a: int, b: float):\n    y = a * 2 + 1\n    if a < 5:\n        y = y * 3\n    return y + b\n";
        let g = build_udf_graph(&parse_udf_text(src, &tables[0].schema()).unwrap());
        annotate_hit_ratios(&g, &stats[0], &sample_rows(&tables[0], 100, 1), 100.0).unwrap()
    }

    fn binding() -> UdfBinding {
        UdfBinding { table: "t".into(), args: vec!["t.a".into(), "t.b".into()] }
    }

    fn edge_kinds(j: &JointGraph) -> Vec<(JointKind, JointKind)> {
        j.edges.iter().map(|&(s, d)| (j.nodes[s].kind, j.nodes[d].kind)).collect()
    }

    #[test]
    fn udf_filter_on_scan() {
        let (tables, stats) = catalog();
        let g = udf(&tables, &stats);
        let f = PlanNode::udf_filter(PlanNode::scan("t"), binding(), CmpOp::Gt, Value::Float(3.0));
        let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]));
        let j = assemble_joint(&plan, Some(&g), &stats).unwrap();
        let kinds = edge_kinds(&j);
        assert_eq!(kinds.iter().filter(|k| **k == (JointKind::Column, JointKind::Inv)).count(), 2);
        assert_eq!(kinds.iter().filter(|k| **k == (JointKind::Ret, JointKind::Filter)).count(), 1);
        assert!(kinds.contains(&(JointKind::Column, JointKind::Comp)));
        let on_udf: Vec<bool> = j
            .nodes
            .iter()
            .filter_map(|n| match &n.features {
                JointFeatures::Operator { on_udf, .. } if n.kind == JointKind::Filter => Some(*on_udf),
                _ => None,
            })
            .collect();
        assert_eq!(on_udf, [true]);
        assert!(j.all_reach_root());
        assert_eq!(j.count(JointKind::OutputColumn), 0);
    }

    #[test]
    fn udf_in_projection() {
        let (tables, stats) = catalog();
        let g = udf(&tables, &stats);
        let mut out = PlanNode::new(PlanOp::Output, vec![PlanNode::scan("t")]);
        out.udf_binding = Some(binding());
        let j = assemble_joint(&PlanTree::new(out), Some(&g), &stats).unwrap();
        let kinds = edge_kinds(&j);
        assert!(kinds.contains(&(JointKind::Ret, JointKind::OutputColumn)));
        assert!(kinds.contains(&(JointKind::OutputColumn, JointKind::Output)));
        assert!(!kinds.iter().any(|k| k.1 == JointKind::Filter));
    }

    #[test]
    fn plan_without_udf() {
        let (_, stats) = catalog();
        let scan_u = PlanNode::filter(PlanNode::scan("u"), vec![ColumnPredicate::new("u.id", CmpOp::Lt, Value::Int(10))]);
        let join = PlanNode::join(PlanNode::scan("t"), scan_u, "t.id", "u.t_id");
        let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![join]));
        let j = assemble_joint(&plan, None, &stats).unwrap();
        assert_eq!(j.udf_offset, None);
        assert_eq!(j.count(JointKind::Table), 2);
        assert_eq!(j.count(JointKind::Column), 3);
        assert_eq!(j.nodes[j.root].kind, JointKind::Output);
    }

    #[test]
    fn binding_errors() {
        let (tables, stats) = catalog();
        let g = udf(&tables, &stats);
        let plain = PlanTree::new(PlanNode::new(PlanOp::Output, vec![PlanNode::scan("t")]));
        assert!(matches!(assemble_joint(&plain, Some(&g), &stats), Err(PlanError::InvalidBinding(_))));
        let bad = UdfBinding { table: "u".into(), args: vec!["u.id".into(), "u.t_id".into()] };
        let f = PlanNode::udf_filter(PlanNode::scan("t"), bad, CmpOp::Gt, Value::Float(3.0));
        let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]));
        assert!(matches!(assemble_joint(&plan, Some(&g), &stats), Err(PlanError::UnknownColumn(_))));
    }

    #[test]
    fn estimated_cards() {
        let (_, stats) = catalog();
        let scan_u = PlanNode::filter(PlanNode::scan("u"), vec![ColumnPredicate::new("u.id", CmpOp::Lt, Value::Int(10))]);
        let join = PlanNode::join(PlanNode::scan("t"), scan_u, "t.id", "u.t_id");
        let f = PlanNode::udf_filter(join, binding(), CmpOp::Gt, Value::Float(3.0));
        let mut plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]));
        estimate_cards(&mut plan, &stats).unwrap();
        let j = plan.node(&[0, 0]);
        assert_eq!(j.children[1].cards.est_out, Some(10.0));
        assert_eq!(j.cards.est_out, Some(10.0));
        assert_eq!(plan.node(&[0]).cards.est_out, plan.node(&[0]).cards.est_in);
        assert_eq!(plan.root.cards.est_out, Some(10.0));
    }

    #[test]
    fn featurization_layout() {
        let (tables, stats) = catalog();
        let g = udf(&tables, &stats);
        let f = PlanNode::udf_filter(PlanNode::scan("t"), binding(), CmpOp::Gt, Value::Float(3.0));
        let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]));
        let j = assemble_joint(&plan, Some(&g), &stats).unwrap();
        let enc = EncoderSpec::new(CardMode::Estimated);
        let fg = featurize(&j, &enc);
        assert_eq!(fg, featurize(&j, &enc));
        for (k, x) in fg.kinds.iter().zip(&fg.features) {
            assert_eq!(x.len(), enc.width(*k), "{k:?}");
        }
        assert!(fg.is_topological(&fg.order));

        // `y = a * 2 + 1` splits into a single COMP with ops {+, *}.
        let comp = j
            .nodes
            .iter()
            .position(|n| matches!(&n.features, JointFeatures::Udf(u) if u.ops().len() == 2))
            .unwrap();
        let ops_start = 2 + enc.vocab.libs.len();
        let hot: f64 = fg.features[comp][ops_start..ops_start + enc.vocab.ops.len()].iter().sum();
        assert_eq!(hot, 2.0);
        // Absent cardinalities: value 0 and presence flag 0.
        let filt = j.nodes.iter().position(|n| n.kind == JointKind::Filter).unwrap();
        assert_eq!(&fg.features[filt][..2], &[0.0, 0.0]);
        assert_eq!(&fg.features[filt][4..6], &[0.0, 0.0]);
    }

    #[test]
    fn fitted_normalization_standardizes() {
        let (tables, stats) = catalog();
        let g = udf(&tables, &stats);
        let f = PlanNode::udf_filter(PlanNode::scan("t"), binding(), CmpOp::Gt, Value::Float(3.0));
        let mut plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![f]));
        estimate_cards(&mut plan, &stats).unwrap();
        let j = assemble_joint(&plan, Some(&g), &stats).unwrap();
        let mut enc = EncoderSpec::new(CardMode::Estimated);
        enc.fit([&j]);
        let fg = featurize(&j, &enc);
        let inv = j.nodes.iter().position(|n| n.kind == JointKind::Inv).unwrap();
        assert_eq!(fg.features[inv][0], 0.0);
        let zero_rows = JointFeatures::Table { rows: 0.0, columns: 0 };
        let x = enc.encode_node(JointKind::Table, &zero_rows);
        assert_eq!(x, enc.encode_node(JointKind::Table, &zero_rows));
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
