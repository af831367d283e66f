use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::cardest::{conjunction_selectivity, ColumnPredicate};
use crate::datastore::TableStats;
use crate::udfscript::{CmpOp, Value};

pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanOp {
    Scan,
    Filter,
    Join,
    Agg,
    Output,
}

impl PlanOp {
    pub const ALL: [PlanOp; 5] = [PlanOp::Scan, PlanOp::Filter, PlanOp::Join, PlanOp::Agg, PlanOp::Output];

    pub fn name(self) -> &'static str {
        match self {
            PlanOp::Scan => "scan",
            PlanOp::Filter => "filter",
            PlanOp::Join => "join",
            PlanOp::Agg => "agg",
            PlanOp::Output => "output",
        }
    }
}

/// Input and output row counts, estimated and actual. Absent values are
/// unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cards {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act_out: Option<f64>,
}

/// Which cardinality flavor feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CardMode {
    Actual,
    Estimated,
}

impl Cards {
    pub fn get(&self, mode: CardMode) -> (Option<f64>, Option<f64>) {
        match mode {
            CardMode::Actual => (self.act_in, self.act_out),
            CardMode::Estimated => (self.est_in, self.est_out),
        }
    }
}

/// Column references are qualified as `table.column`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Conjunction { terms: Vec<ColumnPredicate> },
    Equi { left: String, right: String },
    /// `udf(args) <cmp> threshold`.
    Udf { cmp: CmpOp, threshold: Value },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    pub const ALL: [AggFunc; 5] = [AggFunc::Count, AggFunc::Sum, AggFunc::Avg, AggFunc::Min, AggFunc::Max];

    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub func: AggFunc,
    /// Aggregated column; `None` only for `count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by: Vec<String>,
}

/// The operator invoking the UDF, and the columns bound to its parameters in
/// parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfBinding {
    pub table: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub op: PlanOp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PlanNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub udf_binding: Option<UdfBinding>,
    #[serde(default)]
    pub cards: Cards,
}

impl PlanNode {
    pub fn new(op: PlanOp, children: Vec<PlanNode>) -> Self {
        PlanNode { op, children, table: None, predicate: None, aggregate: None, udf_binding: None, cards: Cards::default() }
    }

    pub fn scan(table: impl Into<String>) -> Self {
        PlanNode { table: Some(table.into()), ..PlanNode::new(PlanOp::Scan, Vec::new()) }
    }

    pub fn filter(child: PlanNode, terms: Vec<ColumnPredicate>) -> Self {
        PlanNode { predicate: Some(Predicate::Conjunction { terms }), ..PlanNode::new(PlanOp::Filter, vec![child]) }
    }

    pub fn udf_filter(child: PlanNode, binding: UdfBinding, cmp: CmpOp, threshold: Value) -> Self {
        PlanNode {
            predicate: Some(Predicate::Udf { cmp, threshold }),
            udf_binding: Some(binding),
            ..PlanNode::new(PlanOp::Filter, vec![child])
        }
    }

    pub fn join(left: PlanNode, right: PlanNode, l: impl Into<String>, r: impl Into<String>) -> Self {
        PlanNode {
            predicate: Some(Predicate::Equi { left: l.into(), right: r.into() }),
            ..PlanNode::new(PlanOp::Join, vec![left, right])
        }
    }

    pub fn is_udf_filter(&self) -> bool {
        self.op == PlanOp::Filter && self.udf_binding.is_some()
    }

    /// Tables scanned in this subtree.
    pub fn tables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let Some(t) = &n.table {
                out.push(t.as_str());
            }
        });
        out
    }

    /// Preorder traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a PlanNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut PlanNode)) {
        f(self);
        for c in &mut self.children {
            c.visit_mut(f);
        }
    }
}

/// A query plan. The root is an OUTPUT operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub version: u32,
    pub root: PlanNode,
}

/// Child indices from the root down to an operator.
pub type PlanPath = Vec<usize>;

impl PlanTree {
    pub fn new(root: PlanNode) -> Self {
        PlanTree { version: PLAN_VERSION, root }
    }

    pub fn node(&self, path: &[usize]) -> &PlanNode {
        path.iter().fold(&self.root, |n, &i| &n.children[i])
    }

    pub fn node_mut(&mut self, path: &[usize]) -> &mut PlanNode {
        path.iter().fold(&mut self.root, |n, &i| &mut n.children[i])
    }

    /// Path of the operator carrying the UDF binding.
    pub fn udf_path(&self) -> Option<PlanPath> {
        fn find(n: &PlanNode, path: &mut PlanPath) -> bool {
            if n.udf_binding.is_some() {
                return true;
            }
            for (i, c) in n.children.iter().enumerate() {
                path.push(i);
                if find(c, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        find(&self.root, &mut path).then_some(path)
    }

    pub fn udf_binding(&self) -> Option<&UdfBinding> {
        self.udf_path().and_then(|p| self.node(&p).udf_binding.as_ref())
    }

    pub fn operator_count(&self) -> usize {
        let mut n = 0;
        self.root.visit(&mut |_| n += 1);
        n
    }

    pub fn count(&self, op: PlanOp) -> usize {
        let mut n = 0;
        self.root.visit(&mut |o| n += (o.op == op) as usize);
        n
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plan serializes")
    }

    /// Checks the structural rules of a plan.
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.version != PLAN_VERSION {
            return Err(PlanError::schema("version", format!("unsupported plan version {}", self.version)));
        }
        if self.root.op != PlanOp::Output {
            return Err(PlanError::schema("root.op", "root operator must be output"));
        }
        let mut udfs = 0;
        check_node(&self.root, "root", true, &mut udfs)?;
        if udfs > 1 {
            return Err(PlanError::schema("root", "plans may invoke at most one UDF"));
        }
        Ok(())
    }
}

fn check_node(n: &PlanNode, path: &str, is_root: bool, udfs: &mut usize) -> Result<(), PlanError> {
    let arity = match n.op {
        PlanOp::Scan => 0,
        PlanOp::Join => 2,
        _ => 1,
    };
    if n.children.len() != arity {
        return Err(PlanError::schema(
            format!("{path}.children"),
            format!("{} expects {arity} children, found {}", n.op.name(), n.children.len()),
        ));
    }
    if n.op == PlanOp::Output && !is_root {
        return Err(PlanError::schema(format!("{path}.op"), "output may only appear at the root"));
    }
    if (n.op == PlanOp::Scan) != n.table.is_some() {
        return Err(PlanError::schema(format!("{path}.table"), "exactly the scan operators name a table"));
    }
    let pred_ok = match (n.op, &n.predicate, &n.udf_binding) {
        (PlanOp::Filter, Some(Predicate::Conjunction { .. }), None) => true,
        (PlanOp::Filter, Some(Predicate::Udf { .. }), Some(_)) => true,
        (PlanOp::Join, Some(Predicate::Equi { .. }), None) => true,
        (PlanOp::Output, None, _) => true,
        (PlanOp::Scan | PlanOp::Agg, None, None) => true,
        _ => false,
    };
    if !pred_ok {
        return Err(PlanError::schema(
            format!("{path}.predicate"),
            format!("predicate or udf_binding does not fit a {} operator", n.op.name()),
        ));
    }
    if (n.op == PlanOp::Agg) != n.aggregate.is_some() {
        return Err(PlanError::schema(format!("{path}.aggregate"), "exactly the agg operators carry an aggregate"));
    }
    if let Some(b) = &n.udf_binding {
        *udfs += 1;
        if b.args.is_empty() {
            return Err(PlanError::schema(format!("{path}.udf_binding.args"), "a UDF takes at least one argument"));
        }
    }
    let c = &n.cards;
    for (name, v) in [("est_in", c.est_in), ("est_out", c.est_out), ("act_in", c.act_in), ("act_out", c.act_out)] {
        if v.is_some_and(|v| !(v >= 0.0)) {
            return Err(PlanError::schema(format!("{path}.cards.{name}"), "cardinalities must be non-negative"));
        }
    }
    for (i, ch) in n.children.iter().enumerate() {
        check_node(ch, &format!("{path}.children[{i}]"), false, udfs)?;
    }
    Ok(())
}

pub fn parse_plan(doc: &serde_json::Value) -> Result<PlanTree, PlanError> {
    let plan: PlanTree = serde_path_to_error::deserialize(doc)
        .map_err(|e| PlanError::schema(e.path().to_string(), e.inner().to_string()))?;
    plan.validate()?;
    Ok(plan)
}

/// Splits `table.column`.
pub fn split_column(qualified: &str) -> (&str, &str) {
    qualified.split_once('.').unwrap_or(("", qualified))
}

fn stats_for<'a>(catalog: &'a [TableStats], table: &str) -> Result<&'a TableStats, PlanError> {
    catalog.iter().find(|s| s.table == table).ok_or_else(|| PlanError::UnknownTable(table.to_string()))
}

fn distinct_of(catalog: &[TableStats], qualified: &str) -> Result<f64, PlanError> {
    let (t, c) = split_column(qualified);
    let cs = stats_for(catalog, t)?.column(c).ok_or_else(|| PlanError::UnknownColumn(qualified.to_string()))?;
    Ok(cs.distinct_count.max(1) as f64)
}

/// Fills `est_in`/`est_out` from table statistics. UDF filters pass rows
/// through unchanged, since their selectivity is what the advisor varies.
pub fn estimate_cards(plan: &mut PlanTree, catalog: &[TableStats]) -> Result<(), PlanError> {
    fn go(n: &mut PlanNode, catalog: &[TableStats]) -> Result<f64, PlanError> {
        let mut ins = Vec::with_capacity(n.children.len());
        for c in &mut n.children {
            ins.push(go(c, catalog)?);
        }
        let (est_in, est_out) = match n.op {
            PlanOp::Scan => {
                let rows = stats_for(catalog, n.table.as_deref().unwrap())?.row_count as f64;
                (rows, rows)
            }
            PlanOp::Filter => {
                let sel = match &n.predicate {
                    Some(Predicate::Conjunction { terms }) => {
                        let mut sel = 1.0;
                        let mut tables: Vec<&str> = terms.iter().map(|t| split_column(&t.column).0).collect();
                        tables.sort_unstable();
                        tables.dedup();
                        for t in tables {
                            let local: Vec<ColumnPredicate> = terms
                                .iter()
                                .filter(|p| split_column(&p.column).0 == t)
                                .map(|p| ColumnPredicate { column: split_column(&p.column).1.to_string(), ..p.clone() })
                                .collect();
                            sel *= conjunction_selectivity(stats_for(catalog, t)?, &local)
                                .map_err(|_| PlanError::UnknownColumn(t.to_string()))?;
                        }
                        sel
                    }
                    _ => 1.0,
                };
                (ins[0], ins[0] * sel)
            }
            PlanOp::Join => {
                let Some(Predicate::Equi { left, right }) = &n.predicate else { unreachable!("validated") };
                let d = distinct_of(catalog, left)?.max(distinct_of(catalog, right)?);
                (ins[0] + ins[1], ins[0] * ins[1] / d)
            }
            PlanOp::Agg => {
                let agg = n.aggregate.as_ref().unwrap();
                let groups = if agg.group_by.is_empty() {
                    1.0
                } else {
                    let mut g = 1.0;
                    for c in &agg.group_by {
                        g *= distinct_of(catalog, c)?;
                    }
                    g.min(ins[0])
                };
                (ins[0], groups)
            }
            PlanOp::Output => (ins[0], ins[0]),
        };
        n.cards.est_in = Some(est_in);
        n.cards.est_out = Some(est_out);
        Ok(est_out)
    }
    go(&mut plan.root, catalog).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn minimal_plan_parses() {
        let doc = json!({"version": 1, "root": {"op": "output", "children": [{"op": "scan", "table": "t"}]}});
        let p = parse_plan(&doc).unwrap();
        assert_eq!(p.operator_count(), 2);
        assert_eq!(p.to_json(), json!({
            "version": 1,
            "root": {"op": "output", "cards": {}, "children": [{"op": "scan", "table": "t", "cards": {}}]}
        }));
    }

    #[test]
    fn roundtrip_with_annotations() {
        let doc = json!({"version": 1, "root": {"op": "output", "cards": {"est_in": 5.0}, "children": [{
            "op": "filter",
            "predicate": {"kind": "udf", "cmp": "<", "threshold": 2.5},
            "udf_binding": {"table": "t", "args": ["t.a"]},
            "cards": {"act_in": 10.0, "act_out": 4.0},
            "children": [{"op": "join", "predicate": {"kind": "equi", "left": "t.k", "right": "u.id"}, "cards": {}, "children": [
                {"op": "scan", "table": "t", "cards": {}},
                {"op": "filter", "cards": {}, "predicate": {"kind": "conjunction", "terms": [{"column": "u.x", "cmp": ">=", "value": 3}]},
                 "children": [{"op": "scan", "table": "u", "cards": {}}]}
            ]}]
        }]}});
        let p = parse_plan(&doc).unwrap();
        assert_eq!(p.to_json(), doc);
        assert_eq!(p.udf_path(), Some(vec![0]));
        assert_eq!(p.count(PlanOp::Join), 1);
    }

    #[test]
    fn join_arity_is_checked() {
        let doc = json!({"version": 1, "root": {"op": "output", "children": [{
            "op": "join", "predicate": {"kind": "equi", "left": "a.x", "right": "b.y"},
            "children": [{"op": "scan", "table": "a"}, {"op": "scan", "table": "b"}, {"op": "scan", "table": "c"}]
        }]}});
        match parse_plan(&doc) {
            Err(PlanError::Schema { path, .. }) => assert_eq!(path, "root.children[0].children"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_documents_report_path() {
        let doc = json!({"version": 1, "root": {"op": "output", "children": [{"op": "teleport"}]}});
        match parse_plan(&doc) {
            Err(PlanError::Schema { path, .. }) => assert_eq!(path, "root.children[0].op"),
            other => panic!("{other:?}"),
        }
        let doc = json!({"version": 1, "root": {"op": "output", "children": [
            {"op": "scan", "table": "t", "cards": {"act_out": -1.0}}
        ]}});
        assert!(matches!(parse_plan(&doc), Err(PlanError::Schema { .. })));
    }

    #[test]
    fn two_udfs_are_rejected() {
        let b = UdfBinding { table: "t".into(), args: vec!["t.a".into()] };
        let inner = PlanNode::udf_filter(PlanNode::scan("t"), b.clone(), CmpOp::Lt, Value::Int(1));
        let outer = PlanNode::udf_filter(inner, b, CmpOp::Lt, Value::Int(1));
        let plan = PlanTree::new(PlanNode::new(PlanOp::Output, vec![outer]));
        assert!(plan.validate().is_err());
    }
}
