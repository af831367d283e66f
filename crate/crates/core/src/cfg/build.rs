//! AST to single-statement CFG.
//!
//! Every statement becomes one node, except that each library call becomes its
//! own COMP node (innermost first) ahead of the node holding the statement's
//! remaining arithmetic. `return e` feeds the single RET node, through a COMP
//! only when `e` performs operations. Branch conditions keep their arithmetic
//! inside the BRANCH node. Loops become LOOP ... LOOP_END spans joined by a
//! residual edge; header arithmetic of a `for` loop gets a COMP before LOOP.

use crate::udfscript::{
    CmpOp, Dtype, Expr, ExprKind, OpKind, Slot, Stmt, StmtId, StmtKind, UdfAst, Value,
};

use super::graph::*;

/// Dangling flow edges waiting for the next node: (source, branch polarity).
type Frontier = Vec<(NodeId, Option<bool>)>;

struct Builder<'a> {
    ast: &'a UdfAst,
    nodes: Vec<UdfNode>,
    edges: Vec<UdfEdge>,
    to_ret: Frontier,
    loops: Vec<NodeId>,
    modified: Vec<Slot>,
}

pub fn build_udf_graph(ast: &UdfAst) -> UdfGraph {
    let mut b = Builder {
        ast,
        nodes: Vec::new(),
        edges: Vec::new(),
        to_ret: Vec::new(),
        loops: Vec::new(),
        modified: ast.assigned_slots(),
    };
    let mut in_dts = [0u32; 4];
    for p in &ast.params {
        in_dts[p.dtype.index()] += 1;
    }
    let mut frontier = Vec::new();
    let inv = b.add(
        NodeKind::Inv,
        NodeFeatures::Inv { in_dts, nr_params: ast.params.len() as u32 },
        None,
        Vec::new(),
        &mut frontier,
    );
    b.block(&ast.body, &mut frontier);
    debug_assert!(frontier.is_empty(), "parser guarantees every path returns");
    let mut pending = std::mem::take(&mut b.to_ret);
    let root = b.add(NodeKind::Ret, NodeFeatures::Ret { out_dtype: ast.out_dtype }, None, Vec::new(), &mut pending);
    UdfGraph { version: GRAPH_VERSION, nodes: b.nodes, edges: b.edges, inv, root, ast: ast.clone() }
}

/// Operations and direct parameter references of an expression, not
/// descending into library calls below the root.
fn scope(e: &Expr, n_params: usize, ops: &mut Vec<OpKind>, cols: &mut Vec<Slot>) {
    if let Some(op) = e.op_kind() {
        ops.push(op);
    }
    if let ExprKind::Var { slot, .. } = e.kind {
        if (slot as usize) < n_params && !cols.contains(&slot) {
            cols.push(slot);
        }
    }
    for c in e.children() {
        if !matches!(c.kind, ExprKind::Call { .. }) {
            scope(c, n_params, ops, cols);
        }
    }
}

fn calls_postorder<'e>(e: &'e Expr, out: &mut Vec<&'e Expr>) {
    for c in e.children() {
        calls_postorder(c, out);
    }
    if matches!(e.kind, ExprKind::Call { .. }) {
        out.push(e);
    }
}

fn first_cmp(e: &Expr) -> Option<CmpOp> {
    let mut found = None;
    e.walk(&mut |x| {
        if let (None, ExprKind::Compare { op, .. }) = (found, &x.kind) {
            found = Some(*op);
        }
    });
    found
}

impl Builder<'_> {
    fn n_params(&self) -> usize {
        self.ast.params.len()
    }

    fn add(
        &mut self,
        kind: NodeKind,
        features: NodeFeatures,
        stmt: Option<StmtId>,
        cols: Vec<Slot>,
        frontier: &mut Frontier,
    ) -> NodeId {
        let id = self.nodes.len();
        let in_loop = !self.loops.is_empty() && kind != NodeKind::Ret;
        self.nodes.push(UdfNode {
            kind,
            features,
            stmt,
            enclosing_loop: if in_loop { self.loops.last().copied() } else { None },
            loop_part: in_loop,
            in_rows: 0.0,
            nr_iter: None,
            visits: None,
            columns: cols.iter().map(|&s| self.ast.params[s as usize].name.clone()).collect(),
        });
        for (src, polarity) in frontier.drain(..) {
            self.edges.push(UdfEdge { src, dst: id, kind: EdgeKind::Flow, polarity, rows: 0.0 });
        }
        frontier.push((id, None));
        id
    }

    fn comp(&mut self, lib: Option<crate::udfscript::LibFunc>, mut ops: Vec<OpKind>, cols: Vec<Slot>, stmt: StmtId, f: &mut Frontier) {
        ops.sort();
        self.add(NodeKind::Comp, NodeFeatures::Comp { lib, ops }, Some(stmt), cols, f);
    }

    /// Emits one COMP per library call in `exprs`, innermost first, and
    /// returns the remaining top-level operations and columns.
    fn split_calls(&mut self, exprs: &[&Expr], stmt: StmtId, f: &mut Frontier) -> (Vec<OpKind>, Vec<Slot>, usize) {
        let n = self.n_params();
        let mut calls = Vec::new();
        for e in exprs {
            calls_postorder(e, &mut calls);
        }
        for call in &calls {
            let ExprKind::Call { func, .. } = &call.kind else { unreachable!() };
            let (mut ops, mut cols) = (Vec::new(), Vec::new());
            scope(call, n, &mut ops, &mut cols);
            self.comp(Some(*func), ops, cols, stmt, f);
        }
        let (mut ops, mut cols) = (Vec::new(), Vec::new());
        for e in exprs {
            if !matches!(e.kind, ExprKind::Call { .. }) {
                scope(e, n, &mut ops, &mut cols);
            }
        }
        (ops, cols, calls.len())
    }

    fn block(&mut self, stmts: &[Stmt], f: &mut Frontier) {
        for s in stmts {
            self.stmt(s, f);
        }
    }

    fn stmt(&mut self, s: &Stmt, f: &mut Frontier) {
        let id = s.id;
        match &s.kind {
            StmtKind::Assign { value, .. } | StmtKind::Expr { value } => {
                let (ops, cols, n_calls) = self.split_calls(&[value], id, f);
                if n_calls == 0 || !ops.is_empty() {
                    self.comp(None, ops, cols, id, f);
                }
            }
            StmtKind::Return { value } => {
                let (ops, cols, _) = self.split_calls(&[value], id, f);
                if !ops.is_empty() {
                    self.comp(None, ops, cols, id, f);
                }
                self.to_ret.append(f);
            }
            StmtKind::If { cond, then_body, else_body } => {
                let (mut ops, cols, _) = self.split_calls(&[cond], id, f);
                ops.sort();
                let features =
                    NodeFeatures::Branch { cmop: first_cmp(cond), predicate: self.classify(cond), ops };
                let br = self.add(NodeKind::Branch, features, Some(id), cols, f);
                f.clear();
                let mut t = vec![(br, Some(true))];
                self.block(then_body, &mut t);
                let mut e = vec![(br, Some(false))];
                self.block(else_body, &mut e);
                f.extend(t);
                f.extend(e);
            }
            StmtKind::For { start, stop, body, .. } => {
                let header: Vec<&Expr> = start.iter().chain(std::iter::once(stop)).collect();
                let (ops, cols, _) = self.split_calls(&header, id, f);
                if !ops.is_empty() {
                    self.comp(None, ops, cols.clone(), id, f);
                }
                let bound = self.bound(start.as_ref(), stop);
                self.loop_span(LoopType::For, bound, Vec::new(), cols, body, id, f);
            }
            StmtKind::While { cond, body } => {
                let (mut ops, cols, _) = self.split_calls(&[cond], id, f);
                ops.sort();
                self.loop_span(LoopType::While, LoopBound::Derived, ops, cols, body, id, f);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn loop_span(
        &mut self,
        loop_type: LoopType,
        bound: LoopBound,
        ops: Vec<OpKind>,
        cols: Vec<Slot>,
        body: &[Stmt],
        id: StmtId,
        f: &mut Frontier,
    ) {
        let lp = self.add(NodeKind::Loop, NodeFeatures::Loop { loop_type, bound, ops }, Some(id), cols, f);
        self.loops.push(lp);
        self.block(body, f);
        self.loops.pop();
        let end = self.add(NodeKind::LoopEnd, NodeFeatures::LoopEnd { loop_type }, Some(id), Vec::new(), f);
        self.edges.push(UdfEdge { src: lp, dst: end, kind: EdgeKind::Residual, polarity: None, rows: 0.0 });
    }

    fn raw_param(&self, e: &Expr) -> Option<String> {
        match &e.kind {
            ExprKind::Var { name, slot } if (*slot as usize) < self.n_params() && !self.modified.contains(slot) => {
                Some(name.clone())
            }
            _ => None,
        }
    }

    fn classify(&self, cond: &Expr) -> BranchPredicate {
        let ExprKind::Compare { op, lhs, rhs } = &cond.kind else { return BranchPredicate::Derived };
        let lit = |e: &Expr| match &e.kind {
            ExprKind::Lit { value } if !matches!(value, Value::Null) => Some(value.clone()),
            _ => None,
        };
        match (self.raw_param(lhs), self.raw_param(rhs)) {
            (Some(a), Some(b)) => BranchPredicate::Raw { column: a, cmp: *op, rhs: PredicateRhs::Column(b) },
            (Some(a), None) => match lit(rhs) {
                Some(v) => BranchPredicate::Raw { column: a, cmp: *op, rhs: PredicateRhs::Literal(v) },
                None => BranchPredicate::Derived,
            },
            (None, Some(b)) => match lit(lhs) {
                Some(v) => BranchPredicate::Raw { column: b, cmp: op.flip(), rhs: PredicateRhs::Literal(v) },
                None => BranchPredicate::Derived,
            },
            (None, None) => BranchPredicate::Derived,
        }
    }

    fn bound(&self, start: Option<&Expr>, stop: &Expr) -> LoopBound {
        let lit = |e: &Expr| match e.kind {
            ExprKind::Lit { value: Value::Int(v) } => Some(v),
            _ => None,
        };
        let lo = match start {
            None => Some(0),
            Some(e) => lit(e),
        };
        let Some(lo) = lo else { return LoopBound::Derived };
        if let Some(hi) = lit(stop) {
            return LoopBound::Const { n: hi.saturating_sub(lo).max(0) };
        }
        match self.raw_param(stop) {
            Some(column) if stop.dtype == Dtype::Int => LoopBound::Column { column, start: lo },
            _ => LoopBound::Derived,
        }
    }
}
