use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::plan::{split_column, AggFunc, Cards, PlanNode, PlanOp, PlanTree, Predicate};
use super::PlanError;
use crate::cfg::{NodeKind, UdfGraph, UdfNode};
use crate::datastore::TableStats;
use crate::udfscript::{CmpOp, Dtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JointKind {
    Table,
    Column,
    Scan,
    Filter,
    Join,
    Agg,
    Output,
    OutputColumn,
    Inv,
    Comp,
    Branch,
    Loop,
    LoopEnd,
    Ret,
}

impl JointKind {
    pub const ALL: [JointKind; 14] = [
        JointKind::Table,
        JointKind::Column,
        JointKind::Scan,
        JointKind::Filter,
        JointKind::Join,
        JointKind::Agg,
        JointKind::Output,
        JointKind::OutputColumn,
        JointKind::Inv,
        JointKind::Comp,
        JointKind::Branch,
        JointKind::Loop,
        JointKind::LoopEnd,
        JointKind::Ret,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn of_plan(op: PlanOp) -> JointKind {
        match op {
            PlanOp::Scan => JointKind::Scan,
            PlanOp::Filter => JointKind::Filter,
            PlanOp::Join => JointKind::Join,
            PlanOp::Agg => JointKind::Agg,
            PlanOp::Output => JointKind::Output,
        }
    }

    pub fn of_udf(kind: NodeKind) -> JointKind {
        match kind {
            NodeKind::Inv => JointKind::Inv,
            NodeKind::Comp => JointKind::Comp,
            NodeKind::Branch => JointKind::Branch,
            NodeKind::Loop => JointKind::Loop,
            NodeKind::LoopEnd => JointKind::LoopEnd,
            NodeKind::Ret => JointKind::Ret,
        }
    }

    pub fn is_udf(self) -> bool {
        self >= JointKind::Inv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointFeatures {
    Table { rows: f64, columns: u32 },
    Column { dtype: Dtype, null_fraction: f64, distinct: f64 },
    Operator { cards: Cards, on_udf: bool, cmops: Vec<CmpOp>, agg: Option<AggFunc>, group_by: u32 },
    OutputColumn { dtype: Dtype },
    Udf(UdfNode),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointNode {
    pub kind: JointKind,
    pub features: JointFeatures,
}

/// Plan operators, TABLE/COLUMN leaves and the embedded UDF graph. Edges point
/// in message direction, from the leaves toward the OUTPUT root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGraph {
    pub nodes: Vec<JointNode>,
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
    /// Index of the first UDF node; UDF nodes are contiguous, in UDF graph order.
    pub udf_offset: Option<usize>,
}

impl JointGraph {
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            out[d].push(s);
        }
        for p in &mut out {
            p.sort_unstable();
        }
        out
    }

    /// Kahn's algorithm, smallest ready index first; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            indeg[d] += 1;
            succ[s].push(d);
        }
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> =
            (0..n).filter(|&v| indeg[v] == 0).map(std::cmp::Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            order.push(v);
            for &w in &succ[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(std::cmp::Reverse(w));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// True iff every node reaches the root.
    pub fn all_reach_root(&self) -> bool {
        let mut rev = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            rev[d].push(s);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        while let Some(v) = stack.pop() {
            for &u in &rev[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn count(&self, kind: JointKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn udf_nodes(&self) -> impl Iterator<Item = &UdfNode> {
        self.nodes.iter().filter_map(|n| match &n.features {
            JointFeatures::Udf(u) => Some(u),
            _ => None,
        })
    }
}

struct Assembler<'a> {
    catalog: &'a [TableStats],
    nodes: Vec<JointNode>,
    edges: Vec<(usize, usize)>,
    columns: HashMap<String, usize>,
    /// Joint id of each plan operator, by plan path.
    op_ids: HashMap<Vec<usize>, usize>,
}

impl Assembler<'_> {
    fn push(&mut self, kind: JointKind, features: JointFeatures) -> usize {
        self.nodes.push(JointNode { kind, features });
        self.nodes.len() - 1
    }

    fn stats(&self, table: &str) -> Result<&TableStats, PlanError> {
        self.catalog.iter().find(|s| s.table == table).ok_or_else(|| PlanError::UnknownTable(table.to_string()))
    }

    fn column(&mut self, qualified: &str) -> Result<usize, PlanError> {
        if let Some(&id) = self.columns.get(qualified) {
            return Ok(id);
        }
        let (t, c) = split_column(qualified);
        let cs = self.stats(t)?.column(c).ok_or_else(|| PlanError::UnknownColumn(qualified.to_string()))?;
        let features = JointFeatures::Column {
            dtype: cs.dtype,
            null_fraction: cs.null_fraction,
            distinct: cs.distinct_count as f64,
        };
        let id = self.push(JointKind::Column, features);
        self.columns.insert(qualified.to_string(), id);
        Ok(id)
    }

    fn operator(&mut self, n: &PlanNode, path: &mut Vec<usize>) -> Result<usize, PlanError> {
        let mut children = Vec::with_capacity(n.children.len());
        for (i, c) in n.children.iter().enumerate() {
            path.push(i);
            children.push(self.operator(c, path)?);
            path.pop();
        }
        let (cmops, group_by, agg) = match (&n.predicate, &n.aggregate) {
            (Some(Predicate::Conjunction { terms }), _) => (terms.iter().map(|t| t.cmp).collect(), 0, None),
            (Some(Predicate::Udf { cmp, .. }), _) => (vec![*cmp], 0, None),
            (_, Some(a)) => (Vec::new(), a.group_by.len() as u32, Some(a.func)),
            _ => (Vec::new(), 0, None),
        };
        let features =
            JointFeatures::Operator { cards: n.cards, on_udf: n.is_udf_filter(), cmops, agg, group_by };
        let id = self.push(JointKind::of_plan(n.op), features);
        self.op_ids.insert(path.clone(), id);
        for c in children {
            self.edges.push((c, id));
        }
        if let Some(t) = &n.table {
            let st = self.stats(t)?;
            let features = JointFeatures::Table { rows: st.row_count as f64, columns: st.columns.len() as u32 };
            let tid = self.push(JointKind::Table, features);
            self.edges.push((tid, id));
        }
        let mut used: Vec<&str> = Vec::new();
        match &n.predicate {
            Some(Predicate::Conjunction { terms }) => used.extend(terms.iter().map(|t| t.column.as_str())),
            Some(Predicate::Equi { left, right }) => used.extend([left.as_str(), right.as_str()]),
            _ => {}
        }
        if let Some(a) = &n.aggregate {
            used.extend(a.column.as_deref());
            used.extend(a.group_by.iter().map(String::as_str));
        }
        used.sort_unstable();
        used.dedup();
        for c in used {
            let cid = self.column(c)?;
            self.edges.push((cid, id));
        }
        Ok(id)
    }
}

/// Embeds `udf` (already annotated) into the plan at the operator carrying the
/// UDF binding. Without a UDF the result is the plan graph alone.
pub fn assemble_joint(plan: &PlanTree, udf: Option<&UdfGraph>, catalog: &[TableStats]) -> Result<JointGraph, PlanError> {
    let mut a = Assembler {
        catalog,
        nodes: Vec::new(),
        edges: Vec::new(),
        columns: HashMap::new(),
        op_ids: HashMap::new(),
    };
    let root = a.operator(&plan.root, &mut Vec::new())?;
    let udf_path = plan.udf_path();
    let udf_offset = match (udf, udf_path) {
        (None, None) => None,
        (None, Some(_)) => return Err(PlanError::InvalidBinding("plan binds a UDF but none was supplied".into())),
        (Some(_), None) => return Err(PlanError::InvalidBinding("no operator binds the UDF".into())),
        (Some(g), Some(path)) => {
            let bound = plan.node(&path);
            let binding = bound.udf_binding.as_ref().unwrap();
            if binding.args.len() != g.ast.params.len() {
                return Err(PlanError::InvalidBinding(format!(
                    "UDF takes {} arguments, binding supplies {}",
                    g.ast.params.len(),
                    binding.args.len()
                )));
            }
            let input_tables = bound.tables();
            for arg in &binding.args {
                if !input_tables.contains(&split_column(arg).0) {
                    return Err(PlanError::UnknownColumn(arg.clone()));
                }
            }
            let bound_id = a.op_ids[&path];
            let offset = a.nodes.len();
            for n in &g.nodes {
                a.push(JointKind::of_udf(n.kind), JointFeatures::Udf(n.clone()));
            }
            for e in &g.edges {
                a.edges.push((offset + e.src, offset + e.dst));
            }
            let arg_ids = binding.args.iter().map(|c| a.column(c)).collect::<Result<Vec<_>, _>>()?;
            for &cid in &arg_ids {
                a.edges.push((cid, offset + g.inv));
            }
            for (i, n) in g.nodes.iter().enumerate() {
                if n.kind != NodeKind::Comp {
                    continue;
                }
                for col in &n.columns {
                    if let Some(p) = g.ast.param_index(col) {
                        a.edges.push((arg_ids[p], offset + i));
                    }
                }
            }
            let ret = offset + g.root;
            if bound.op == PlanOp::Filter {
                a.edges.push((ret, bound_id));
            } else {
                let oc = a.push(JointKind::OutputColumn, JointFeatures::OutputColumn { dtype: g.ast.out_dtype });
                a.edges.push((ret, oc));
                a.edges.push((oc, bound_id));
            }
            Some(offset)
        }
    };
    a.edges.sort_unstable();
    a.edges.dedup();
    let jg = JointGraph { nodes: a.nodes, edges: a.edges, root, udf_offset };
    if jg.topological_order().is_none() || !jg.all_reach_root() {
        return Err(PlanError::InvalidBinding("assembled graph is not a rooted DAG".into()));
    }
    Ok(jg)
}
