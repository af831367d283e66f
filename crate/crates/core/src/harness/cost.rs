use serde::{Deserialize, Serialize};

use crate::cfg::{NodeKind, UdfGraph, UdfNode};
use crate::plangraph::{PlanOp, PlanTree};
use crate::udfscript::{LibFunc, OpKind};

/// Seconds per unit of work for the synthetic label oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Charged once per query.
    pub base: f64,
    /// Per input plus output row, indexed scan, filter, join, agg, output.
    pub operator: [f64; 5],
    /// Per UDF invocation.
    pub invocation: f64,
    /// Per node execution, indexed like `NodeKind::ALL`.
    pub node: [f64; 6],
    /// Per operation execution, indexed like `OpKind::ALL`.
    pub op: [f64; 18],
    /// Per library call execution, indexed like `LibFunc::ALL`.
    pub lib: [f64; 14],
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            base: 1e-4,
            operator: [2e-7, 1e-7, 6e-7, 3e-7, 1e-7],
            invocation: 4e-7,
            node: [0.0, 2e-8, 3e-8, 3e-8, 1e-8, 1e-8],
            op: [
                1e-8, 1e-8, 1e-8, 2e-8, 2e-8, 2e-8, 4e-8, 5e-9, // arithmetic
                6e-8, 5e-8, 5e-8, 4e-8, 8e-8, 1e-8, 3e-8, // string
                2e-8, 1e-8, 5e-9, // cast, compare, logic
            ],
            lib: [5e-8, 8e-8, 8e-8, 7e-8, 7e-8, 2e-8, 2e-8, 9e-8, 1e-8, 3e-8, 3e-8, 3e-8, 4e-8, 9e-8],
        }
    }
}

fn op_index(op: PlanOp) -> usize {
    match op {
        PlanOp::Scan => 0,
        PlanOp::Filter => 1,
        PlanOp::Join => 2,
        PlanOp::Agg => 3,
        PlanOp::Output => 4,
    }
}

impl CostWeights {
    /// Cost of executing `n` once.
    pub fn node_weight(&self, n: &UdfNode) -> f64 {
        let kind = NodeKind::ALL.iter().position(|k| *k == n.kind).unwrap();
        let ops: f64 = n.ops().iter().map(|o| self.op[OpKind::ALL.iter().position(|x| x == o).unwrap()]).sum();
        let lib = n.lib().map_or(0.0, |l| self.lib[LibFunc::ALL.iter().position(|x| *x == l).unwrap()]);
        self.node[kind] + ops + lib
    }
}

/// Executions of a node: raw statement visits, plus one condition test per
/// iteration for loop headers.
fn executions(n: &UdfNode) -> f64 {
    let visits = n.visits.unwrap_or(n.in_rows);
    match n.kind {
        NodeKind::Loop => visits * (1.0 + n.nr_iter.unwrap_or(0.0)),
        _ => visits,
    }
}

/// The UDF part of the synthetic cost: invocations plus every node's weight
/// times its executions.
pub fn udf_cost(udf: &UdfGraph, w: &CostWeights) -> f64 {
    let rows = udf.nodes[udf.inv].in_rows;
    rows * w.invocation + udf.nodes.iter().map(|n| w.node_weight(n) * executions(n)).sum::<f64>()
}

/// Deterministic label: a base constant, per-operator row costs over actual
/// cardinalities (estimates where actuals are missing) and the UDF cost from
/// an exactly annotated graph.
pub fn synthetic_cost(plan: &PlanTree, udf: Option<&UdfGraph>, w: &CostWeights) -> f64 {
    let mut cost = w.base;
    plan.root.visit(&mut |n| {
        let c = &n.cards;
        let rows = c.act_in.or(c.est_in).unwrap_or(0.0) + c.act_out.or(c.est_out).unwrap_or(0.0);
        cost += w.operator[op_index(n.op)] * rows;
    });
    if let Some(g) = udf {
        cost += udf_cost(g, w);
    }
    cost
}
