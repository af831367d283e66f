use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::graph::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    EdgeOutOfRange { edge: usize },
    Cyclic,
    MissingInvocation,
    MultipleInvocations,
    MissingReturn,
    MultipleReturns,
    BadEndpoints,
    Unreachable { node: NodeId },
    CannotReachReturn { node: NodeId },
    BadResidual { edge: usize },
    UnmatchedLoop { node: NodeId },
    LoopPartMismatch { node: NodeId },
    NegativeRows { node: NodeId },
    WrongFeatures { node: NodeId },
}

fn reach(n: usize, start: usize, adj: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

fn features_match(n: &UdfNode) -> bool {
    matches!(
        (n.kind, &n.features),
        (NodeKind::Inv, NodeFeatures::Inv { .. })
            | (NodeKind::Comp, NodeFeatures::Comp { .. })
            | (NodeKind::Branch, NodeFeatures::Branch { .. })
            | (NodeKind::Loop, NodeFeatures::Loop { .. })
            | (NodeKind::LoopEnd, NodeFeatures::LoopEnd { .. })
            | (NodeKind::Ret, NodeFeatures::Ret { .. })
    )
}

/// Checks every structural invariant; an empty result means the graph is valid.
pub fn validate_graph(g: &UdfGraph) -> Vec<Violation> {
    let n = g.nodes.len();
    let mut out = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        if e.src >= n || e.dst >= n {
            out.push(Violation::EdgeOutOfRange { edge: i });
        }
    }
    if !out.is_empty() {
        return out;
    }

    let mut fwd = vec![Vec::new(); n];
    let mut back = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (_, e) in g.flow_edges() {
        fwd[e.src].push(e.dst);
        back[e.dst].push(e.src);
        indeg[e.dst] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut visited = 0;
    while let Some(v) = queue.pop_front() {
        visited += 1;
        for &w in &fwd[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    if visited != n {
        out.push(Violation::Cyclic);
    }

    match g.count(NodeKind::Inv) {
        0 => out.push(Violation::MissingInvocation),
        1 => {}
        _ => out.push(Violation::MultipleInvocations),
    }
    match g.count(NodeKind::Ret) {
        0 => out.push(Violation::MissingReturn),
        1 => {}
        _ => out.push(Violation::MultipleReturns),
    }
    let endpoints_ok = g.inv < n && g.root < n && g.nodes[g.inv].kind == NodeKind::Inv && g.nodes[g.root].kind == NodeKind::Ret;
    if !endpoints_ok {
        out.push(Violation::BadEndpoints);
    } else {
        let from_inv = reach(n, g.inv, &fwd);
        let to_ret = reach(n, g.root, &back);
        for v in 0..n {
            if !from_inv[v] {
                out.push(Violation::Unreachable { node: v });
            }
            if !to_ret[v] {
                out.push(Violation::CannotReachReturn { node: v });
            }
        }
    }

    let mut expected_part = vec![false; n];
    let mut matched = vec![false; n];
    for (i, e) in g.edges.iter().enumerate() {
        if e.kind != EdgeKind::Residual {
            continue;
        }
        if g.nodes[e.src].kind != NodeKind::Loop || g.nodes[e.dst].kind != NodeKind::LoopEnd {
            out.push(Violation::BadResidual { edge: i });
            continue;
        }
        matched[e.src] = true;
        matched[e.dst] = true;
        let after_loop = reach(n, e.src, &fwd);
        let before_end = reach(n, e.dst, &back);
        for v in 0..n {
            if v != e.src && v != e.dst && after_loop[v] && before_end[v] {
                expected_part[v] = true;
            }
        }
    }
    for (v, node) in g.nodes.iter().enumerate() {
        if matches!(node.kind, NodeKind::Loop | NodeKind::LoopEnd) && !matched[v] {
            out.push(Violation::UnmatchedLoop { node: v });
        }
        if node.loop_part != expected_part[v] {
            out.push(Violation::LoopPartMismatch { node: v });
        }
        if !(node.in_rows >= 0.0) {
            out.push(Violation::NegativeRows { node: v });
        }
        if !features_match(node) {
            out.push(Violation::WrongFeatures { node: v });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_udf_graph;
    use crate::udfscript::parse_udf_text;

    fn graph(src: &str) -> UdfGraph {
        build_udf_graph(&parse_udf_text(src, &[]).unwrap())
    }

    const SRC: &str = "def f(x: int):\n    s = 0\n    for i in range(x):\n        if i > 2:\n            s += 1\n    if s > 1:\n        return s\n    return 0\n";

    #[test]
    fn built_graphs_are_valid() {
        assert_eq!(validate_graph(&graph(SRC)), []);
        assert_eq!(validate_graph(&graph("def f(x:int): return x")), []);
    }

    #[test]
    fn injected_cycle() {
        let mut g = graph(SRC);
        let last = g.root - 1;
        g.edges.push(UdfEdge { src: last, dst: 1, kind: EdgeKind::Flow, polarity: None, rows: 0.0 });
        assert!(validate_graph(&g).contains(&Violation::Cyclic));
    }

    #[test]
    fn second_return() {
        let mut g = graph("def f(x:int): return x");
        g.nodes.push(g.nodes[1].clone());
        g.edges.push(UdfEdge { src: 0, dst: 2, kind: EdgeKind::Flow, polarity: None, rows: 0.0 });
        let v = validate_graph(&g);
        assert!(v.contains(&Violation::MultipleReturns), "{v:?}");
    }

    #[test]
    fn loop_part_and_residual_checks() {
        let mut g = graph(SRC);
        let comp_in_loop = g.nodes.iter().position(|n| n.loop_part).unwrap();
        g.nodes[comp_in_loop].loop_part = false;
        assert!(validate_graph(&g).contains(&Violation::LoopPartMismatch { node: comp_in_loop }));

        let mut g = graph(SRC);
        g.edges.push(UdfEdge { src: 0, dst: g.root, kind: EdgeKind::Residual, polarity: None, rows: 0.0 });
        assert!(matches!(validate_graph(&g)[..], [Violation::BadResidual { .. }]));
    }

    #[test]
    fn dangling_node_is_unreachable() {
        let mut g = graph("def f(x:int): return x");
        let mut extra = g.nodes[0].clone();
        extra.kind = NodeKind::Comp;
        extra.features = NodeFeatures::Comp { lib: None, ops: vec![] };
        g.nodes.push(extra);
        let v = validate_graph(&g);
        assert!(v.contains(&Violation::Unreachable { node: 2 }));
        assert!(v.contains(&Violation::CannotReachReturn { node: 2 }));
    }
}
