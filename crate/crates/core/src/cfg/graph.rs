use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::udfscript::{CmpOp, Dtype, LibFunc, OpKind, StmtId, UdfAst, Value};

pub const GRAPH_VERSION: u32 = 1;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    Inv,
    Comp,
    Branch,
    Loop,
    LoopEnd,
    Ret,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] =
        [NodeKind::Inv, NodeKind::Comp, NodeKind::Branch, NodeKind::Loop, NodeKind::LoopEnd, NodeKind::Ret];

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Inv => "INV",
            NodeKind::Comp => "COMP",
            NodeKind::Branch => "BRANCH",
            NodeKind::Loop => "LOOP",
            NodeKind::LoopEnd => "LOOP_END",
            NodeKind::Ret => "RET",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopType {
    For,
    While,
}

/// How a loop's trip count is determined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "snake_case")]
pub enum LoopBound {
    /// `range` over literal bounds.
    Const { n: i64 },
    /// `range(col)` or `range(start, col)` over an unmodified parameter.
    Column { column: String, start: i64 },
    /// Anything else, including every `while` loop.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PredicateRhs {
    Literal(Value),
    Column(String),
}

/// A branch condition, classified by whether it can be answered from
/// statistics over raw input columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum BranchPredicate {
    /// `column <cmp> rhs` over unmodified parameters (operands normalized so the
    /// column is on the left).
    Raw { column: String, cmp: CmpOp, rhs: PredicateRhs },
    /// Depends on variables computed inside the UDF or on compound logic.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeFeatures {
    Inv {
        /// Parameter count per dtype, indexed by `Dtype::index`.
        in_dts: [u32; 4],
        nr_params: u32,
    },
    Comp {
        lib: Option<LibFunc>,
        /// Operations performed by the node, sorted, with repetitions.
        ops: Vec<OpKind>,
    },
    Branch {
        cmop: Option<CmpOp>,
        predicate: BranchPredicate,
        /// Operations evaluated inside the condition.
        ops: Vec<OpKind>,
    },
    Loop {
        loop_type: LoopType,
        bound: LoopBound,
        /// Operations in the loop header evaluated per test (`while` only).
        ops: Vec<OpKind>,
    },
    LoopEnd {
        loop_type: LoopType,
    },
    Ret {
        out_dtype: Dtype,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfNode {
    pub kind: NodeKind,
    pub features: NodeFeatures,
    /// Source statement; `None` for INV and RET.
    pub stmt: Option<StmtId>,
    /// Innermost enclosing LOOP node.
    pub enclosing_loop: Option<NodeId>,
    pub loop_part: bool,
    /// Rows (UDF invocations) reaching this node. RET's value is its out_rows.
    pub in_rows: f64,
    /// Mean iterations per loop entry (LOOP and LOOP_END only).
    pub nr_iter: Option<f64>,
    /// Total raw executions from an exact trace, loop iterations included.
    pub visits: Option<f64>,
    /// Parameters referenced directly by this node's own expressions.
    pub columns: Vec<String>,
}

impl UdfNode {
    pub fn ops(&self) -> &[OpKind] {
        match &self.features {
            NodeFeatures::Comp { ops, .. } | NodeFeatures::Branch { ops, .. } | NodeFeatures::Loop { ops, .. } => ops,
            _ => &[],
        }
    }

    pub fn lib(&self) -> Option<LibFunc> {
        match &self.features {
            NodeFeatures::Comp { lib, .. } => *lib,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Flow,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    /// Branch outcome for edges leaving a BRANCH node.
    pub polarity: Option<bool>,
    /// Rows flowing along the edge once annotated.
    pub rows: f64,
}

/// The acyclic single-statement control-flow graph of a UDF. Node indices are
/// a topological order of the flow edges, INV first and RET last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfGraph {
    pub version: u32,
    pub nodes: Vec<UdfNode>,
    pub edges: Vec<UdfEdge>,
    pub inv: NodeId,
    pub root: NodeId,
    pub ast: UdfAst,
}

#[derive(Debug, Error)]
pub enum GraphFormatError {
    #[error("malformed UDF graph document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported UDF graph version {found} (expected {GRAPH_VERSION})")]
    Version { found: u32 },
}

impl UdfGraph {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serializes")
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<UdfGraph, GraphFormatError> {
        let found = doc.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != GRAPH_VERSION {
            return Err(GraphFormatError::Version { found });
        }
        Ok(serde_json::from_value(doc.clone())?)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn flow_edges(&self) -> impl Iterator<Item = (usize, &UdfEdge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.kind == EdgeKind::Flow)
    }

    /// Outgoing flow-edge indices per node.
    pub fn flow_successors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.flow_edges() {
            if e.src < self.nodes.len() {
                out[e.src].push(i);
            }
        }
        out
    }

    /// Incoming flow-edge indices per node.
    pub fn flow_predecessors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.flow_edges() {
            if e.dst < self.nodes.len() {
                out[e.dst].push(i);
            }
        }
        out
    }

    /// The LOOP_END matching a LOOP node, via its residual edge.
    pub fn loop_end_of(&self, loop_node: NodeId) -> Option<NodeId> {
        self.edges
            .iter()
            .find(|e| e.kind == EdgeKind::Residual && e.src == loop_node)
            .map(|e| e.dst)
    }

    pub fn out_rows(&self) -> f64 {
        self.nodes[self.root].in_rows
    }
}
