use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cost::{synthetic_cost, CostWeights};
use super::HarnessError;
use crate::cardest::annotate_from_trace;
use crate::cfg::build_udf_graph;
use crate::datastore::Database;
use crate::plangraph::{AggFunc, PlanNode, PlanOp, PlanPath, PlanTree, Predicate};
use crate::udfscript::{eval_compare, CmpOp, Interpreter, TraceCounters, UdfAst, Value};

/// How a runtime label is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Wall-clock time of the executor.
    Measured,
    /// Deterministic cost computed from actual cardinalities and UDF traces.
    Synthetic,
}

impl LabelMode {
    pub fn name(self) -> &'static str {
        match self {
            LabelMode::Measured => "measured",
            LabelMode::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub mode: LabelMode,
    /// Timed runs after one discarded warm-up; the median is reported.
    pub repeats: usize,
    /// Runs faster than this are repeated in a batch until the batch takes
    /// this long, and timed per run.
    pub min_batch_seconds: f64,
    pub weights: CostWeights,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { mode: LabelMode::Synthetic, repeats: 3, min_batch_seconds: 0.005, weights: CostWeights::default() }
    }
}

impl ExecConfig {
    pub fn with_mode(mode: LabelMode) -> Self {
        ExecConfig { mode, ..ExecConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorCards {
    pub path: PlanPath,
    pub op: PlanOp,
    pub act_in: f64,
    pub act_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub runtime_seconds: f64,
    /// Every operator in preorder.
    pub operators: Vec<OperatorCards>,
    /// Order-independent hash of the output rows.
    pub checksum: u64,
    /// Rows the UDF was invoked on.
    pub udf_rows: u64,
    pub udf_trace: Option<TraceCounters>,
}

impl ExecutionResult {
    /// Writes the actual cardinalities into `plan`.
    pub fn annotate(&self, plan: &mut PlanTree) {
        for o in &self.operators {
            let n = plan.node_mut(&o.path);
            n.cards.act_in = Some(o.act_in);
            n.cards.act_out = Some(o.act_out);
        }
    }

    pub fn cards_at(&self, path: &[usize]) -> Option<&OperatorCards> {
        self.operators.iter().find(|o| o.path == path)
    }
}

/// Join and grouping key. Integral floats hash like ints.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Int(i64),
    Float(u64),
    Str(Arc<str>),
    Bool(bool),
}

fn key(v: &Value) -> Option<Key> {
    match v {
        Value::Null => None,
        Value::Int(i) => Some(Key::Int(*i)),
        Value::Float(f) if f.fract() == 0.0 && f.abs() < 9e15 => Some(Key::Int(*f as i64)),
        Value::Float(f) => Some(Key::Float(f.to_bits())),
        Value::Str(s) => Some(Key::Str(s.clone())),
        Value::Bool(b) => Some(Key::Bool(*b)),
    }
}

fn hash_value(v: &Value, h: &mut impl Hasher) {
    match key(v) {
        None => 0u8.hash(h),
        Some(k) => k.hash(h),
    }
}

struct Rel {
    cols: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Rel {
    fn index(&self, name: &str) -> Result<usize, HarnessError> {
        self.cols.iter().position(|c| c == name).ok_or_else(|| HarnessError::UnknownColumn(name.to_string()))
    }
}

struct Run<'a> {
    db: &'a Database,
    udf: Option<&'a UdfAst>,
    interp: Interpreter,
    trace: Option<TraceCounters>,
    udf_rows: u64,
    cards: Vec<OperatorCards>,
}

fn path_text(path: &[usize]) -> String {
    if path.is_empty() {
        "root".into()
    } else {
        format!("root.{}", path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("."))
    }
}

impl Run<'_> {
    fn call_udf(&mut self, node: &PlanNode, rel: &Rel, path: &[usize]) -> Result<Vec<Value>, HarnessError> {
        let ast = self.udf.ok_or(HarnessError::MissingUdf)?;
        let binding = node.udf_binding.as_ref().unwrap();
        let args = binding.args.iter().map(|a| rel.index(a)).collect::<Result<Vec<_>, _>>()?;
        let trace = self.trace.get_or_insert_with(|| TraceCounters::for_ast(ast));
        let mut buf = Vec::with_capacity(args.len());
        let mut out = Vec::with_capacity(rel.rows.len());
        for (i, row) in rel.rows.iter().enumerate() {
            buf.clear();
            buf.extend(args.iter().map(|&a| row[a].clone()));
            let v = self
                .interp
                .run(ast, &buf, trace)
                .map_err(|fault| HarnessError::Fault { operator: path_text(path), row: i, fault })?;
            out.push(v);
        }
        self.udf_rows += rel.rows.len() as u64;
        Ok(out)
    }

    fn node(&mut self, n: &PlanNode, path: &mut PlanPath) -> Result<Rel, HarnessError> {
        let slot = self.cards.len();
        self.cards.push(OperatorCards { path: path.clone(), op: n.op, act_in: 0.0, act_out: 0.0 });
        let mut inputs = Vec::with_capacity(n.children.len());
        for (i, c) in n.children.iter().enumerate() {
            path.push(i);
            inputs.push(self.node(c, path)?);
            path.pop();
        }
        let in_rows: usize = inputs.iter().map(|r| r.rows.len()).sum();
        let out = match n.op {
            PlanOp::Scan => {
                let t = self.db.table(n.table.as_deref().unwrap())?;
                let cols = t.columns.iter().map(|c| format!("{}.{}", t.name, c.name)).collect();
                let rows = (0..t.row_count).map(|i| t.columns.iter().map(|c| c.data.get(i)).collect()).collect();
                Rel { cols, rows }
            }
            PlanOp::Filter => {
                let input = inputs.pop().unwrap();
                match n.predicate.as_ref().unwrap() {
                    Predicate::Conjunction { terms } => {
                        let idx = terms.iter().map(|t| input.index(&t.column)).collect::<Result<Vec<_>, _>>()?;
                        let rows =
                            input.rows.into_iter().filter(|r| terms.iter().zip(&idx).all(|(t, &i)| t.holds(&r[i]))).collect();
                        Rel { cols: input.cols, rows }
                    }
                    Predicate::Udf { cmp, threshold } => {
                        let values = self.call_udf(n, &input, path)?;
                        let rows = input
                            .rows
                            .into_iter()
                            .zip(values)
                            .filter(|(_, v)| eval_compare(*cmp, v, threshold))
                            .map(|(r, _)| r)
                            .collect();
                        Rel { cols: input.cols, rows }
                    }
                    Predicate::Equi { .. } => unreachable!("validated"),
                }
            }
            PlanOp::Join => {
                let right = inputs.pop().unwrap();
                let left = inputs.pop().unwrap();
                let Some(Predicate::Equi { left: l, right: r }) = &n.predicate else { unreachable!("validated") };
                let (li, ri) = match (left.index(l), right.index(r)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => (left.index(r)?, right.index(l)?),
                };
                let mut table: HashMap<Key, Vec<usize>> = HashMap::with_capacity(right.rows.len());
                for (i, row) in right.rows.iter().enumerate() {
                    if let Some(k) = key(&row[ri]) {
                        table.entry(k).or_default().push(i);
                    }
                }
                let mut rows = Vec::new();
                for lrow in &left.rows {
                    let Some(k) = key(&lrow[li]) else { continue };
                    if let Some(matches) = table.get(&k) {
                        for &m in matches {
                            let mut row = Vec::with_capacity(lrow.len() + right.cols.len());
                            row.extend_from_slice(lrow);
                            row.extend_from_slice(&right.rows[m]);
                            rows.push(row);
                        }
                    }
                }
                let mut cols = left.cols;
                cols.extend(right.cols);
                let out = Rel { cols, rows };
                if out.rows.len() > left.rows.len() * right.rows.len() {
                    return Err(HarnessError::Conservation(format!("join at {} grew beyond |L|x|R|", path_text(path))));
                }
                out
            }
            PlanOp::Agg => aggregate(n, inputs.pop().unwrap())?,
            PlanOp::Output => {
                let mut input = inputs.pop().unwrap();
                if n.udf_binding.is_some() {
                    let values = self.call_udf(n, &input, path)?;
                    for (r, v) in input.rows.iter_mut().zip(values) {
                        r.push(v);
                    }
                    input.cols.push("udf".into());
                }
                input
            }
        };
        let act_in = if n.op == PlanOp::Scan { out.rows.len() } else { in_rows };
        if matches!(n.op, PlanOp::Filter | PlanOp::Agg) && out.rows.len() > act_in {
            return Err(HarnessError::Conservation(format!(
                "{} at {} produced {} rows from {act_in}",
                n.op.name(),
                path_text(path),
                out.rows.len()
            )));
        }
        self.cards[slot].act_in = act_in as f64;
        self.cards[slot].act_out = out.rows.len() as f64;
        Ok(out)
    }
}

fn aggregate(n: &PlanNode, input: Rel) -> Result<Rel, HarnessError> {
    let agg = n.aggregate.as_ref().unwrap();
    let groups = agg.group_by.iter().map(|c| input.index(c)).collect::<Result<Vec<_>, _>>()?;
    let col = agg.column.as_ref().map(|c| input.index(c)).transpose()?;
    // Group state: (count, sum, min, max) over non-null inputs.
    let mut state: HashMap<Vec<Option<Key>>, (Vec<Value>, u64, f64, Option<Value>, Option<Value>)> = HashMap::new();
    let mut order = Vec::new();
    for row in &input.rows {
        let k: Vec<Option<Key>> = groups.iter().map(|&g| key(&row[g])).collect();
        let e = state.entry(k.clone()).or_insert_with(|| {
            order.push(k);
            (groups.iter().map(|&g| row[g].clone()).collect(), 0, 0.0, None, None)
        });
        let v = match col {
            Some(c) if row[c].is_null() => continue,
            Some(c) => row[c].clone(),
            None => Value::Int(1),
        };
        e.1 += 1;
        e.2 += v.as_f64().unwrap_or(0.0);
        if e.3.as_ref().is_none_or(|m| v.total_cmp(m).is_lt()) {
            e.3 = Some(v.clone());
        }
        if e.4.as_ref().is_none_or(|m| v.total_cmp(m).is_gt()) {
            e.4 = Some(v);
        }
    }
    let mut rows = Vec::with_capacity(order.len());
    for k in order {
        let (mut keys, count, sum, min, max) = state.remove(&k).unwrap();
        keys.push(match agg.func {
            AggFunc::Count => Value::Int(count as i64),
            AggFunc::Sum => Value::Float(sum),
            AggFunc::Avg if count == 0 => Value::Null,
            AggFunc::Avg => Value::Float(sum / count as f64),
            AggFunc::Min => min.unwrap_or(Value::Null),
            AggFunc::Max => max.unwrap_or(Value::Null),
        });
        rows.push(keys);
    }
    let mut cols = agg.group_by.clone();
    cols.push(agg.func.name().to_string());
    Ok(Rel { cols, rows })
}

struct RunOutput {
    cards: Vec<OperatorCards>,
    checksum: u64,
    udf_rows: u64,
    trace: Option<TraceCounters>,
}

fn run_once(plan: &PlanTree, db: &Database, udf: Option<&UdfAst>) -> Result<RunOutput, HarnessError> {
    let mut run = Run { db, udf, interp: Interpreter::new(), trace: None, udf_rows: 0, cards: Vec::new() };
    let out = run.node(&plan.root, &mut Vec::new())?;
    let mut checksum = 0u64;
    for row in &out.rows {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in row {
            hash_value(v, &mut h);
        }
        checksum = checksum.wrapping_add(h.finish());
    }
    Ok(RunOutput { cards: run.cards, checksum, udf_rows: run.udf_rows, trace: run.trace })
}

/// Wall time of one run; fast runs are batched up to `min_batch` seconds.
fn timed(plan: &PlanTree, db: &Database, udf: Option<&UdfAst>, min_batch: f64) -> Result<f64, HarnessError> {
    let start = Instant::now();
    let mut n = 0u32;
    loop {
        run_once(plan, db, udf)?;
        n += 1;
        let el = start.elapsed().as_secs_f64();
        if el >= min_batch || n >= 10_000 {
            return Ok(el / n as f64);
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Executes `plan` over `db`, recording actual cardinalities at every
/// operator. `udf` must be the parsed UDF when the plan binds one.
pub fn execute(
    plan: &PlanTree,
    db: &Database,
    udf: Option<&UdfAst>,
    cfg: &ExecConfig,
) -> Result<ExecutionResult, HarnessError> {
    plan.validate()?;
    if plan.udf_path().is_some() && udf.is_none() {
        return Err(HarnessError::MissingUdf);
    }
    let first = run_once(plan, db, udf)?;
    let runtime_seconds = match cfg.mode {
        LabelMode::Synthetic => {
            let mut annotated = plan.clone();
            for o in &first.cards {
                let n = annotated.node_mut(&o.path);
                n.cards.act_in = Some(o.act_in);
                n.cards.act_out = Some(o.act_out);
            }
            let graph = match (udf, &first.trace) {
                (Some(ast), Some(trace)) => Some(annotate_from_trace(&build_udf_graph(ast), trace, first.udf_rows as f64)),
                _ => None,
            };
            synthetic_cost(&annotated, graph.as_ref(), &cfg.weights)
        }
        LabelMode::Measured => {
            let mut times = Vec::with_capacity(cfg.repeats.max(1));
            for _ in 0..cfg.repeats.max(1) {
                times.push(timed(plan, db, udf, cfg.min_batch_seconds)?);
            }
            median(&mut times).max(1e-9)
        }
    };
    Ok(ExecutionResult {
        runtime_seconds,
        operators: first.cards,
        checksum: first.checksum,
        udf_rows: first.udf_rows,
        udf_trace: first.trace,
    })
}

/// Values the UDF produces inside the plan, in input row order of the
/// operator invoking it.
pub fn udf_values(plan: &PlanTree, db: &Database, udf: &UdfAst) -> Result<Vec<Value>, HarnessError> {
    let path = plan.udf_path().ok_or(HarnessError::MissingUdf)?;
    let mut run = Run { db, udf: Some(udf), interp: Interpreter::new(), trace: None, udf_rows: 0, cards: Vec::new() };
    let node = plan.node(&path);
    let mut child_path = path.clone();
    child_path.push(0);
    let input = run.node(&node.children[0], &mut child_path)?;
    run.call_udf(node, &input, &path)
}

/// `udf(row) <cmp> threshold` with the executor's comparison semantics.
pub fn udf_passes(cmp: CmpOp, v: &Value, threshold: &Value) -> bool {
    eval_compare(cmp, v, threshold)
}
