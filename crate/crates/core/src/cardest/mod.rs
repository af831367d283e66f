//! Selectivity and hit-ratio estimation for UDF graphs.
//!
//! Branch conditions over raw input columns are answered from column
//! statistics under attribute independence, conditioned on the branch outcomes
//! that lead to the branch. Conditions over variables computed inside the UDF
//! are answered by tracing the UDF over a row sample. Every BRANCH node is
//! annotated with a conditional ratio, so row counts are conserved at branches
//! and homogeneous in the input cardinality.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cfg::{
    enumerate_paths, BranchPredicate, EdgeKind, LoopBound, NodeFeatures, NodeId, NodeKind, PathExplosion,
    PredicateRhs, UdfGraph,
};
use crate::datastore::{ColumnConstraint, RowSample, Table, TableStats};
use crate::udfscript::{
    eval_compare, CmpOp, Interpreter, LoopLimit, RuntimeFault, StmtId, TraceCounters, UdfAst, Value,
};

/// Rows drawn for derived-variable and loop estimation.
pub const SAMPLE_SIZE: usize = 1000;
/// Iteration cap per loop execution when estimating trip counts on the sample.
pub const SAMPLE_LOOP_CAP: u64 = 10_000;

#[derive(Debug, Error)]
pub enum CardError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error(transparent)]
    PathExplosion(#[from] PathExplosion),
    #[error("row {row}: {fault}")]
    Fault { row: usize, fault: RuntimeFault },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectivitySource {
    Histogram,
    Sample,
    Exact,
    Assumed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selectivity {
    pub value: f64,
    pub source: SelectivitySource,
}

/// `column <cmp> value` over a base-table column; NULL never satisfies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPredicate {
    pub column: String,
    pub cmp: CmpOp,
    pub value: Value,
}

impl ColumnPredicate {
    pub fn new(column: impl Into<String>, cmp: CmpOp, value: Value) -> Self {
        ColumnPredicate { column: column.into(), cmp, value }
    }

    pub fn holds(&self, v: &Value) -> bool {
        !v.is_null() && eval_compare(self.cmp, v, &self.value)
    }
}

/// One conjunct of a path condition. Negations are already folded into `cmp`
/// or `polarity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case")]
pub enum Conjunct {
    Column { column: String, cmp: CmpOp, rhs: PredicateRhs },
    /// Outcome of a branch statement whose condition reads derived variables;
    /// needs the UDF to evaluate.
    Derived { stmt: StmtId, polarity: bool },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub conjuncts: Vec<Conjunct>,
}

/// Index of the table column feeding each UDF parameter (exact name, or the
/// part after the last `.`).
pub fn bind_columns(ast: &UdfAst, table: &Table) -> Result<Vec<usize>, CardError> {
    ast.params
        .iter()
        .map(|p| find_column(table, &p.name).ok_or_else(|| CardError::UnknownColumn(p.name.clone())))
        .collect()
}

fn find_column(table: &Table, name: &str) -> Option<usize> {
    let bare = name.rsplit_once('.').map_or(name, |(_, c)| c);
    table.column_index(name).or_else(|| table.column_index(bare))
}

fn stats_column<'a>(stats: &'a TableStats, name: &str) -> Option<&'a crate::datastore::ColumnStats> {
    let bare = name.rsplit_once('.').map_or(name, |(_, c)| c);
    stats.column(name).or_else(|| stats.column(bare))
}

fn clamp_selectivity(v: f64, row_count: u64) -> f64 {
    v.clamp(1.0 / (row_count as f64 + 1.0), 1.0)
}

/// Selectivity of literal comparisons over raw columns: per-column constraints
/// intersected, columns multiplied.
fn histogram_selectivity<'a>(
    stats: &TableStats,
    preds: impl IntoIterator<Item = (&'a str, CmpOp, &'a Value)>,
) -> Result<f64, CardError> {
    let mut per_col: Vec<(&crate::datastore::ColumnStats, ColumnConstraint)> = Vec::new();
    for (col, cmp, lit) in preds {
        let cs = stats_column(stats, col).ok_or_else(|| CardError::UnknownColumn(col.to_string()))?;
        match per_col.iter_mut().find(|(s, _)| s.name == cs.name) {
            Some((_, c)) => c.add(cmp, lit),
            None => {
                let mut c = ColumnConstraint::new(cs.dtype);
                c.add(cmp, lit);
                per_col.push((cs, c));
            }
        }
    }
    Ok(per_col.iter().map(|(s, c)| s.selectivity(c)).product())
}

/// Histogram estimate for a conjunction of literal predicates on one table's
/// columns (table qualifiers are ignored).
pub fn conjunction_selectivity(stats: &TableStats, preds: &[ColumnPredicate]) -> Result<f64, CardError> {
    histogram_selectivity(stats, preds.iter().map(|p| (p.column.as_str(), p.cmp, &p.value)))
}

/// Runs the UDF over every sample row, calling `f` with each row's trace.
/// Rows that fault are skipped.
fn trace_sample(ast: &UdfAst, sample: &RowSample, mut f: impl FnMut(&TraceCounters)) -> Result<(), CardError> {
    let cols = bind_columns(ast, &sample.rows)?;
    let mut interp = Interpreter::with_limit(LoopLimit::Truncate(SAMPLE_LOOP_CAP));
    let mut trace = TraceCounters::for_ast(ast);
    let mut row = Vec::with_capacity(cols.len());
    for i in 0..sample.rows.row_count {
        sample.rows.row_values(i, &cols, &mut row);
        trace.clear();
        if interp.run(ast, &row, &mut trace).is_ok() {
            f(&trace);
        }
    }
    Ok(())
}

pub fn estimate_condition_selectivity(
    cond: &Condition,
    stats: &TableStats,
    sample: &RowSample,
    prefix_ast: Option<&UdfAst>,
) -> Result<Selectivity, CardError> {
    if cond.conjuncts.is_empty() {
        return Ok(Selectivity { value: 1.0, source: SelectivitySource::Exact });
    }
    let mut literal = Vec::new();
    let mut col_col = Vec::new();
    let mut derived = Vec::new();
    for c in &cond.conjuncts {
        match c {
            Conjunct::Column { column, cmp, rhs: PredicateRhs::Literal(v) } => literal.push((column.as_str(), *cmp, v)),
            Conjunct::Column { column, cmp, rhs: PredicateRhs::Column(other) } => {
                for name in [column, other] {
                    if stats_column(stats, name).is_none() {
                        return Err(CardError::UnknownColumn(name.clone()));
                    }
                }
                col_col.push((column, *cmp, other));
            }
            Conjunct::Derived { stmt, polarity } => derived.push((*stmt, *polarity)),
        }
    }
    let mut value = histogram_selectivity(stats, literal)?;
    let mut source = SelectivitySource::Histogram;

    if !col_col.is_empty() {
        let mut idx = Vec::new();
        for (a, cmp, b) in &col_col {
            let ia = find_column(&sample.rows, a).ok_or_else(|| CardError::UnknownColumn(a.to_string()))?;
            let ib = find_column(&sample.rows, b).ok_or_else(|| CardError::UnknownColumn(b.to_string()))?;
            idx.push((ia, *cmp, ib));
        }
        let t = &sample.rows;
        let hits = (0..t.row_count)
            .filter(|&r| {
                idx.iter().all(|&(a, cmp, b)| {
                    let (x, y) = (t.columns[a].data.get(r), t.columns[b].data.get(r));
                    !x.is_null() && !y.is_null() && eval_compare(cmp, &x, &y)
                })
            })
            .count();
        if t.row_count == 0 {
            source = SelectivitySource::Assumed;
            value *= 0.5;
        } else {
            source = SelectivitySource::Sample;
            value *= hits as f64 / t.row_count as f64;
        }
    }

    if !derived.is_empty() {
        let (mut reached, mut hits) = (0u64, 0u64);
        if let Some(ast) = prefix_ast {
            trace_sample(ast, sample, |tr| {
                let all_reached = derived.iter().all(|&(s, _)| tr.visits[s as usize] > 0);
                if all_reached {
                    reached += 1;
                    let ok = derived.iter().all(|&(s, pol)| {
                        let [t, f] = tr.branch_outcomes[s as usize];
                        if pol { t > 0 && f == 0 } else { f > 0 && t == 0 }
                    });
                    hits += ok as u64;
                }
            })?;
        }
        if reached == 0 {
            source = SelectivitySource::Assumed;
            value *= 0.5f64.powi(derived.len() as i32);
        } else {
            if source != SelectivitySource::Assumed {
                source = SelectivitySource::Sample;
            }
            value *= hits as f64 / reached as f64;
        }
    }
    Ok(Selectivity { value: clamp_selectivity(value, stats.row_count), source })
}

/// Per-branch outcome ratios, `[true, false]` counts from a trace over many rows.
fn branch_ratio(outcomes: [u64; 2]) -> Option<f64> {
    let n = outcomes[0] + outcomes[1];
    (n > 0).then(|| outcomes[0] as f64 / n as f64)
}

/// Pushes `input_rows` through the flow edges, splitting at each BRANCH by its
/// true ratio. Nodes inside loops carry the loop entry's rows.
fn propagate(g: &mut UdfGraph, input_rows: f64, ratio: &[f64]) {
    let succ = g.flow_successors();
    let pred = g.flow_predecessors();
    for n in 0..g.nodes.len() {
        let rows = if n == g.inv { input_rows } else { pred[n].iter().map(|&e| g.edges[e].rows).sum() };
        g.nodes[n].in_rows = rows;
        for &e in &succ[n] {
            g.edges[e].rows = match g.edges[e].polarity {
                Some(true) => rows * ratio[n],
                Some(false) => rows * (1.0 - ratio[n]),
                None => rows,
            };
        }
    }
    for i in 0..g.edges.len() {
        if g.edges[i].kind == EdgeKind::Residual {
            g.edges[i].rows = g.nodes[g.edges[i].src].in_rows;
        }
    }
}

fn set_nr_iter(g: &mut UdfGraph, loop_node: NodeId, iters: f64) {
    g.nodes[loop_node].nr_iter = Some(iters);
    if let Some(end) = g.loop_end_of(loop_node) {
        g.nodes[end].nr_iter = Some(iters);
    }
}

fn branch_stmt(g: &UdfGraph, n: NodeId) -> StmtId {
    g.nodes[n].stmt.expect("branch nodes carry their statement")
}

pub fn annotate_hit_ratios(
    graph: &UdfGraph,
    stats: &TableStats,
    sample: &RowSample,
    input_rows: f64,
) -> Result<UdfGraph, CardError> {
    let mut g = graph.clone();
    let paths = enumerate_paths(&g)?;

    let needs_sample = g.nodes.iter().any(|n| match &n.features {
        NodeFeatures::Branch { predicate, .. } => {
            !matches!(predicate, BranchPredicate::Raw { rhs: PredicateRhs::Literal(_), .. })
        }
        NodeFeatures::Loop { bound, .. } => matches!(bound, LoopBound::Derived),
        _ => false,
    });
    let mut totals = TraceCounters::for_ast(&g.ast);
    if needs_sample {
        trace_sample(&g.ast, sample, |tr| totals.add(tr))?;
    }
    let sampled_ratio = |g: &UdfGraph, n: NodeId| {
        branch_ratio(totals.branch_outcomes[branch_stmt(g, n) as usize]).unwrap_or(0.5)
    };

    // Ratio of each derived branch, used as an independent factor along paths.
    let mut ratio = vec![1.0; g.nodes.len()];
    for n in 0..g.nodes.len() {
        if let NodeFeatures::Branch { predicate, .. } = &g.nodes[n].features {
            if !matches!(predicate, BranchPredicate::Raw { rhs: PredicateRhs::Literal(_), .. }) {
                ratio[n] = sampled_ratio(&g, n);
            }
        }
    }

    // Raw branches: condition on every distinct prefix reaching the branch.
    let mut mass = vec![[0.0f64; 2]; g.nodes.len()];
    let mut seen: HashSet<Vec<NodeId>> = HashSet::new();
    for p in &paths {
        for (k, c) in p.conjuncts.iter().enumerate() {
            let BranchPredicate::Raw { column, cmp, rhs: PredicateRhs::Literal(lit) } = &c.predicate else {
                continue;
            };
            let at = p.path.iter().position(|&n| n == c.branch).unwrap();
            if !seen.insert(p.path[..=at].to_vec()) {
                continue;
            }
            let mut weight = 1.0;
            let mut preds: Vec<(&str, CmpOp, &Value)> = Vec::new();
            for prev in &p.conjuncts[..k] {
                match &prev.predicate {
                    BranchPredicate::Raw { column, cmp, rhs: PredicateRhs::Literal(v) } => {
                        let cmp = if prev.polarity { *cmp } else { cmp.negate() };
                        preds.push((column, cmp, v));
                    }
                    _ => {
                        let r = ratio[prev.branch];
                        weight *= if prev.polarity { r } else { 1.0 - r };
                    }
                }
            }
            for (slot, op) in [(0, *cmp), (1, cmp.negate())] {
                let mut all = preds.clone();
                all.push((column, op, lit));
                mass[c.branch][slot] += weight * histogram_selectivity(stats, all)?;
            }
        }
    }
    for n in 0..g.nodes.len() {
        if let NodeFeatures::Branch { predicate: BranchPredicate::Raw { column, cmp, rhs: PredicateRhs::Literal(lit) }, .. } =
            &g.nodes[n].features
        {
            let [t, f] = mass[n];
            ratio[n] = if t + f > 0.0 {
                t / (t + f)
            } else {
                let t = histogram_selectivity(stats, [(column.as_str(), *cmp, lit)])?;
                let f = histogram_selectivity(stats, [(column.as_str(), cmp.negate(), lit)])?;
                if t + f > 0.0 { t / (t + f) } else { 0.5 }
            };
        }
    }
    propagate(&mut g, input_rows, &ratio);

    for n in 0..g.nodes.len() {
        let NodeFeatures::Loop { bound, .. } = &g.nodes[n].features else { continue };
        let iters = match bound {
            LoopBound::Const { n } => (*n).max(0) as f64,
            LoopBound::Column { column, start } => {
                let cs = stats_column(stats, column).ok_or_else(|| CardError::UnknownColumn(column.clone()))?;
                let mean = cs.mean.unwrap_or(0.0);
                (mean - *start as f64).clamp(0.0, SAMPLE_LOOP_CAP as f64)
            }
            LoopBound::Derived => {
                let s = g.nodes[n].stmt.unwrap() as usize;
                if totals.visits[s] > 0 {
                    totals.loop_iterations[s] as f64 / totals.visits[s] as f64
                } else {
                    1.0
                }
            }
        };
        set_nr_iter(&mut g, n, iters);
    }
    Ok(g)
}

/// Exact annotation: interprets the UDF on every row passing `pre_filter`.
/// Branch ratios and trip counts are the observed ones; `visits` holds raw
/// statement executions.
pub fn oracle_hit_ratios(
    graph: &UdfGraph,
    ast: &UdfAst,
    table: &Table,
    pre_filter: &[ColumnPredicate],
) -> Result<UdfGraph, CardError> {
    let cols = bind_columns(ast, table)?;
    let filter_cols = pre_filter
        .iter()
        .map(|p| find_column(table, &p.column).ok_or_else(|| CardError::UnknownColumn(p.column.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut interp = Interpreter::new();
    let mut totals = TraceCounters::for_ast(ast);
    let mut row = Vec::with_capacity(cols.len());
    let mut rows = 0usize;
    for i in 0..table.row_count {
        let pass = pre_filter.iter().zip(&filter_cols).all(|(p, &c)| p.holds(&table.columns[c].data.get(i)));
        if !pass {
            continue;
        }
        table.row_values(i, &cols, &mut row);
        interp.run(ast, &row, &mut totals).map_err(|fault| CardError::Fault { row: i, fault })?;
        rows += 1;
    }

    Ok(annotate_from_trace(graph, &totals, rows as f64))
}

/// Annotates a graph from a trace aggregated over `rows` invocations.
pub fn annotate_from_trace(graph: &UdfGraph, totals: &TraceCounters, rows: f64) -> UdfGraph {
    let mut g = graph.clone();
    let mut ratio = vec![1.0; g.nodes.len()];
    for n in 0..g.nodes.len() {
        if g.nodes[n].kind == NodeKind::Branch {
            ratio[n] = branch_ratio(totals.branch_outcomes[branch_stmt(&g, n) as usize]).unwrap_or(0.5);
        }
    }
    propagate(&mut g, rows, &ratio);
    for n in 0..g.nodes.len() {
        let node = &mut g.nodes[n];
        node.visits = Some(node.stmt.map_or(rows, |s| totals.visits[s as usize] as f64));
        if node.kind == NodeKind::Loop {
            let s = node.stmt.unwrap() as usize;
            let entries = totals.visits[s];
            let iters = if entries > 0 { totals.loop_iterations[s] as f64 / entries as f64 } else { 0.0 };
            set_nr_iter(&mut g, n, iters);
        }
    }
    g
}

/// Rescales row annotations to `rows` invocations. Branch ratios and trip
/// counts are kept, so the graph must carry positive input rows.
pub fn rescale_input_rows(graph: &UdfGraph, rows: f64) -> UdfGraph {
    let mut g = graph.clone();
    let old = g.nodes[g.inv].in_rows;
    if old <= 0.0 || old == rows {
        return g;
    }
    let f = rows / old;
    for n in &mut g.nodes {
        n.in_rows *= f;
        if let Some(v) = &mut n.visits {
            *v *= f;
        }
    }
    for e in &mut g.edges {
        e.rows *= f;
    }
    g.nodes[g.inv].in_rows = rows;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_udf_graph;
    use crate::datastore::{build_stats, sample_rows, Column, ColumnData, DEFAULT_BUCKETS};
    use crate::udfscript::parse_udf_text;

    fn digits_table(n: i64) -> Table {
        Table::new(
            "t",
            vec![
                Column::new("x", ColumnData::Int((0..n).map(|i| Some(i % 10)).collect())),
                Column::new("y", ColumnData::Int((0..n).map(|i| Some((i * 7) % 13)).collect())),
            ],
        )
        .unwrap()
    }

    fn setup(src: &str, t: &Table) -> (UdfGraph, TableStats, RowSample) {
        let ast = parse_udf_text(src, &t.schema()).unwrap();
        (build_udf_graph(&ast), build_stats(t, DEFAULT_BUCKETS), sample_rows(t, SAMPLE_SIZE, 7))
    }

    fn lit(column: &str, cmp: CmpOp, v: i64) -> Conjunct {
        Conjunct::Column { column: column.into(), cmp, rhs: PredicateRhs::Literal(Value::Int(v)) }
    }

    #[test]
    fn condition_selectivity_examples() {
        let t = digits_table(1000);
        let stats = build_stats(&t, DEFAULT_BUCKETS);
        let sample = sample_rows(&t, SAMPLE_SIZE, 1);
        let est = |c: Vec<Conjunct>| estimate_condition_selectivity(&Condition { conjuncts: c }, &stats, &sample, None).unwrap();

        let empty = est(vec![]);
        assert_eq!((empty.value, empty.source), (1.0, SelectivitySource::Exact));
        let lt = est(vec![lit("x", CmpOp::Lt, 5)]);
        assert!((lt.value - 0.5).abs() < 0.02);
        assert_eq!(lt.source, SelectivitySource::Histogram);
        assert!((est(vec![lit("x", CmpOp::Eq, 4)]).value - 0.1).abs() < 0.01);
        let none = est(vec![lit("x", CmpOp::Lt, 3), lit("x", CmpOp::Gt, 6)]);
        assert_eq!(none.value, 1.0 / 1001.0);

        let err = estimate_condition_selectivity(
            &Condition { conjuncts: vec![lit("zz", CmpOp::Lt, 1)] },
            &stats,
            &sample,
            None,
        );
        assert!(matches!(err, Err(CardError::UnknownColumn(c)) if c == "zz"));
    }

    #[test]
    fn derived_conjuncts_use_the_sample() {
        let t = digits_table(1000);
        let ast = parse_udf_text("def f(x: int):\n    z = x * 2\n    if z < 10:\n        return 1\n    return 0\n", &[])
            .unwrap();
        let stats = build_stats(&t, DEFAULT_BUCKETS);
        let sample = sample_rows(&t, SAMPLE_SIZE, 1);
        let branch = 1;
        let cond = Condition { conjuncts: vec![Conjunct::Derived { stmt: branch, polarity: true }] };
        let s = estimate_condition_selectivity(&cond, &stats, &sample, Some(&ast)).unwrap();
        assert_eq!(s.source, SelectivitySource::Sample);
        assert!((s.value - 0.5).abs() < 1e-12);
        let assumed = estimate_condition_selectivity(&cond, &stats, &sample, None).unwrap();
        assert_eq!(assumed.source, SelectivitySource::Assumed);
    }

    #[test]
    fn branchless_udf_keeps_input_rows() {
        let t = digits_table(100);
        let (g, stats, sample) = setup("def f(x: int):\n    y = x + 1\n    return y * 2\n", &t);
        let a = annotate_hit_ratios(&g, &stats, &sample, 1000.0).unwrap();
        assert!(a.nodes.iter().all(|n| n.in_rows == 1000.0));
    }

    #[test]
    fn branch_split_and_merge() {
        let t = digits_table(1000);
        let src = "def f(x: int):\n    y = 0\n    if x < 5:\n        y = 1\n    else:\n        y = 2\n    return y\n";
        let (g, stats, sample) = setup(src, &t);
        let a = annotate_hit_ratios(&g, &stats, &sample, 1000.0).unwrap();
        let b = a.nodes.iter().position(|n| n.kind == NodeKind::Branch).unwrap();
        let outs: Vec<f64> = a.edges.iter().filter(|e| e.src == b).map(|e| e.rows).collect();
        assert_eq!(outs.len(), 2);
        assert!(outs.iter().all(|r| (r - 500.0).abs() < 1e-9), "{outs:?}");
        assert_eq!(a.out_rows(), 1000.0);

        let exact = oracle_hit_ratios(&g, &g.ast, &t, &[]).unwrap();
        let true_child = exact.edges.iter().find(|e| e.src == b && e.polarity == Some(true)).unwrap().dst;
        assert_eq!(exact.nodes[true_child].in_rows, 500.0);
        assert_eq!(exact.nodes[true_child].visits, Some(500.0));
    }

    #[test]
    fn rescaling_matches_reannotation() {
        let t = digits_table(1000);
        let src = "def f(x: int):\n    y = 0\n    if x < 3:\n        y = 1\n    return y\n";
        let (g, stats, sample) = setup(src, &t);
        let unit = annotate_hit_ratios(&g, &stats, &sample, 1.0).unwrap();
        let direct = annotate_hit_ratios(&g, &stats, &sample, 250.0).unwrap();
        let scaled = rescale_input_rows(&unit, 250.0);
        for (a, b) in scaled.edges.iter().zip(&direct.edges) {
            assert!((a.rows - b.rows).abs() < 1e-9);
        }
        assert_eq!(scaled.nodes[g.inv].in_rows, 250.0);
    }

    #[test]
    fn conditioned_on_earlier_branches() {
        let t = digits_table(1000);
        let src = "def f(x: int):\n    if x < 5:\n        if x < 7:\n            return 1\n        return 2\n    return 3\n";
        let (g, stats, sample) = setup(src, &t);
        let a = annotate_hit_ratios(&g, &stats, &sample, 100.0).unwrap();
        let inner = a.nodes.iter().rposition(|n| n.kind == NodeKind::Branch).unwrap();
        let t_edge = a.edges.iter().find(|e| e.src == inner && e.polarity == Some(true)).unwrap();
        assert!((t_edge.rows - 50.0).abs() < 1e-9);
    }

    #[test]
    fn pre_filter_changes_exact_ratio() {
        let t = digits_table(1000);
        let src = "def f(x: int):\n    if x < 5:\n        return 1\n    return 0\n";
        let (g, _, _) = setup(src, &t);
        let exact = oracle_hit_ratios(&g, &g.ast, &t, &[ColumnPredicate::new("x", CmpOp::Lt, Value::Int(3))]).unwrap();
        assert_eq!(exact.nodes[g.inv].in_rows, 300.0);
        let e = exact.edges.iter().find(|e| e.src == 1 && e.polarity == Some(true)).unwrap();
        assert_eq!(e.rows, 300.0);

        let empty = Table::empty("t", &t.schema());
        let exact = oracle_hit_ratios(&g, &g.ast, &empty, &[]).unwrap();
        assert!(exact.nodes.iter().all(|n| n.in_rows == 0.0));
    }

    #[test]
    fn loop_trip_counts() {
        let t = digits_table(1000);
        let (g, stats, sample) = setup("def f(x: int):\n    s = 0\n    for i in range(3):\n        s = s + i\n    return s\n", &t);
        let a = annotate_hit_ratios(&g, &stats, &sample, 10.0).unwrap();
        let lp = a.nodes.iter().position(|n| n.kind == NodeKind::Loop).unwrap();
        assert_eq!(a.nodes[lp].nr_iter, Some(3.0));
        assert_eq!(a.nodes[a.loop_end_of(lp).unwrap()].nr_iter, Some(3.0));

        let (g, stats, sample) = setup("def f(x: int):\n    s = 0\n    for i in range(x):\n        s = s + i\n    return s\n", &t);
        let a = annotate_hit_ratios(&g, &stats, &sample, 10.0).unwrap();
        let lp = a.nodes.iter().position(|n| n.kind == NodeKind::Loop).unwrap();
        assert!((a.nodes[lp].nr_iter.unwrap() - 4.5).abs() < 1e-9);

        let src = "def f(x: int):\n    s = 0\n    while s < x:\n        s = s + 1\n    return s\n";
        let (g, stats, sample) = setup(src, &t);
        let a = annotate_hit_ratios(&g, &stats, &sample, 10.0).unwrap();
        let lp = a.nodes.iter().position(|n| n.kind == NodeKind::Loop).unwrap();
        assert!((a.nodes[lp].nr_iter.unwrap() - 4.5).abs() < 1e-9);
        let exact = oracle_hit_ratios(&g, &g.ast, &t, &[]).unwrap();
        assert_eq!(exact.nodes[lp].nr_iter, Some(4.5));
    }

    #[test]
    fn oracle_reports_faulting_row() {
        let t = digits_table(20);
        let (g, _, _) = setup("def f(x: int): return 10 // x", &t);
        let err = oracle_hit_ratios(&g, &g.ast, &t, &[]).unwrap_err();
        assert!(matches!(err, CardError::Fault { row: 0, .. }));
    }
}
