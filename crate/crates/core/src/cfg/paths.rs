use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::*;

pub const DEFAULT_PATH_CAP: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConjunct {
    pub branch: NodeId,
    pub predicate: BranchPredicate,
    pub polarity: bool,
}

/// One INV→RET flow path with the branch outcomes it requires, in path order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCondition {
    pub path: Vec<NodeId>,
    pub conjuncts: Vec<PathConjunct>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("UDF graph has {count} paths, more than the cap of {cap}")]
pub struct PathExplosion {
    pub count: u128,
    pub cap: usize,
}

/// Number of INV→RET flow paths, saturating.
pub fn count_paths(graph: &UdfGraph) -> u128 {
    let succ = graph.flow_successors();
    // Node indices are topological, so a reverse sweep suffices.
    let mut ways = vec![0u128; graph.nodes.len()];
    for n in (0..graph.nodes.len()).rev() {
        ways[n] = if n == graph.root {
            1
        } else {
            succ[n].iter().fold(0u128, |acc, &e| acc.saturating_add(ways[graph.edges[e].dst]))
        };
    }
    ways.get(graph.inv).copied().unwrap_or(0)
}

pub fn enumerate_paths(graph: &UdfGraph) -> Result<Vec<PathCondition>, PathExplosion> {
    enumerate_paths_capped(graph, DEFAULT_PATH_CAP)
}

pub fn enumerate_paths_capped(graph: &UdfGraph, cap: usize) -> Result<Vec<PathCondition>, PathExplosion> {
    let count = count_paths(graph);
    if count > cap as u128 {
        return Err(PathExplosion { count, cap });
    }
    let succ = graph.flow_successors();
    let mut out = Vec::with_capacity(count as usize);
    let mut path = vec![graph.inv];
    let mut conj = Vec::new();
    walk(graph, &succ, &mut path, &mut conj, &mut out);
    Ok(out)
}

fn walk(
    g: &UdfGraph,
    succ: &[Vec<usize>],
    path: &mut Vec<NodeId>,
    conj: &mut Vec<PathConjunct>,
    out: &mut Vec<PathCondition>,
) {
    let node = *path.last().unwrap();
    if node == g.root {
        out.push(PathCondition { path: path.clone(), conjuncts: conj.clone() });
        return;
    }
    for &ei in &succ[node] {
        let e = &g.edges[ei];
        let pushed = match (e.polarity, &g.nodes[node].features) {
            (Some(polarity), NodeFeatures::Branch { predicate, .. }) => {
                conj.push(PathConjunct { branch: node, predicate: predicate.clone(), polarity });
                true
            }
            _ => false,
        };
        path.push(e.dst);
        walk(g, succ, path, conj, out);
        path.pop();
        if pushed {
            conj.pop();
        }
    }
}
