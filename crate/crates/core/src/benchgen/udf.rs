use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::database::draw_value;
use super::GenConfig;
use crate::datastore::{Distribution, SchemaSpec, TableSpec};
use crate::udfscript::{parse_udf, Dtype, ExprKind, Param, StmtKind, UdfAst, UdfSource, Value};

/// Realized structure of a UDF, counted on its syntax tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UdfMeta {
    pub branches: usize,
    pub loops: usize,
    pub ops: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedUdf {
    pub source: UdfSource,
    /// Table whose columns the parameters are named after.
    pub table: String,
    pub meta: UdfMeta,
}

/// Operator applications, library calls, casts and string operations in every
/// expression of the body, loop headers and conditions included.
pub fn count_ops(ast: &UdfAst) -> usize {
    let mut n = 0;
    ast.for_each_stmt(|s, _| {
        for e in s.exprs() {
            e.walk(&mut |x| n += usize::from(!matches!(x.kind, ExprKind::Var { .. } | ExprKind::Lit { .. })));
        }
    });
    n
}

pub fn structure_of(ast: &UdfAst) -> UdfMeta {
    let (mut branches, mut loops) = (0, 0);
    ast.for_each_stmt(|s, _| match s.kind {
        StmtKind::If { .. } => branches += 1,
        StmtKind::For { .. } | StmtKind::While { .. } => loops += 1,
        _ => {}
    });
    UdfMeta { branches, loops, ops: count_ops(ast) }
}

enum Node {
    Line(String),
    If { cond: String, then_b: Vec<usize>, else_b: Option<Vec<usize>> },
    For { var: String, bound: String, body: Vec<usize> },
    While { counter: String, bound: String, body: Vec<usize> },
}

#[derive(Clone, Copy)]
enum Slot {
    Top,
    Then(usize),
    Else(usize),
    Body(usize),
}

struct Gen<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    /// Numeric parameters with their distributions.
    nums: Vec<(String, Dtype, Distribution)>,
    strs: Vec<(String, Distribution)>,
    vars: Vec<String>,
    nodes: Vec<Node>,
    top: Vec<usize>,
    /// Insertion points with the loop depth of code placed there.
    slots: Vec<(Slot, usize)>,
    loops: usize,
}

fn lit_f(x: f64) -> String {
    format!("{:?}", (x * 100.0).round() / 100.0)
}

fn lit_value(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format!("{f:?}"),
        Value::Str(s) => format!("\"{s}\""),
        other => other.to_string(),
    }
}

impl Gen<'_> {
    fn coin(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p.clamp(0.0, 1.0))
    }

    fn var(&mut self) -> String {
        self.vars.choose(&mut self.rng).unwrap().clone()
    }

    /// A derived variable or a numeric parameter.
    fn operand(&mut self) -> String {
        if self.nums.is_empty() || self.coin(0.55) {
            self.var()
        } else {
            self.nums.choose(&mut self.rng).unwrap().0.clone()
        }
    }

    /// One term: (text, ops, linear gain in its operand magnitudes).
    fn term(&mut self) -> (String, usize, u32) {
        if !self.strs.is_empty() && self.coin(0.12) {
            let s = self.strs.choose(&mut self.rng).unwrap().0.clone();
            return match self.rng.gen_range(0..6) {
                0 => (format!("len({s}.upper())"), 2, 0),
                1 => (format!("len({s} + \"_x\")"), 2, 0),
                2 => (format!("len({s}.strip().lower())"), 3, 0),
                3 => (format!("len({s}.replace(\"w\", \"ab\"))"), 2, 0),
                4 => (format!("len({s}[0:2])"), 2, 0),
                _ => (format!("float(len({s}))"), 2, 0),
            };
        }
        if !self.nums.is_empty() && self.coin(0.06) {
            let p = self.nums.choose(&mut self.rng).unwrap().0.clone();
            return match self.rng.gen_range(0..5) {
                0 => (format!("1.0 / {p}"), 1, 0),
                1 => (format!("np.divide(2.0, {p})"), 1, 0),
                2 => (format!("math.log({p})"), 1, 0),
                3 => (format!("math.sqrt({p})"), 1, 0),
                _ => (format!("math.pow({p}, 0.5)"), 1, 0),
            };
        }
        let x = self.operand();
        match self.rng.gen_range(0..15) {
            0 => (x, 0, 1),
            1 => (format!("math.sin({x})"), 1, 0),
            2 => (format!("math.cos({x})"), 1, 0),
            3 => (format!("math.sqrt(abs({x}) + 1.0)"), 3, 0),
            4 => (format!("math.log(abs({x}) + 1.0)"), 3, 0),
            5 => (format!("math.exp(math.sin({x}))"), 2, 0),
            6 => {
                let y = self.operand();
                (format!("{x} / (abs({y}) + 1.0)"), 3, 1)
            }
            7 => {
                let y = self.operand();
                (format!("np.add({x}, {y})"), 1, 2)
            }
            8 => {
                let y = self.operand();
                (format!("np.subtract({x}, {y})"), 1, 2)
            }
            9 => (format!("math.floor({x})"), 1, 1),
            10 => (format!("{x} % 7.0"), 1, 0),
            11 => (format!("np.power(math.cos({x}), 2)"), 2, 0),
            12 => (format!("abs({x})"), 1, 1),
            13 => (format!("np.multiply({x}, 0.5)"), 1, 1),
            _ => (format!("math.ceil({x} / 3.0)"), 2, 1),
        }
    }

    /// An assignment to a derived variable. The coefficients keep the sum of
    /// linear gains below 0.9, so repeated execution cannot diverge.
    fn line(&mut self, max_terms: usize) -> (String, usize) {
        let target = self.var();
        let k = self.rng.gen_range(1..=max_terms.max(1));
        let mut text = String::new();
        let mut ops = 0;
        for i in 0..k {
            let (t, t_ops, gain) = self.term();
            let c = if gain == 0 {
                self.rng.gen_range(0.1..2.0)
            } else {
                self.rng.gen_range(0.05..0.9 / (k as f64 * gain as f64))
            };
            if i > 0 {
                text.push_str(if self.coin(0.5) { " + " } else { " - " });
                ops += 1;
            }
            text.push_str(&format!("{} * {t}", lit_f(c.max(0.01))));
            ops += t_ops + 1;
        }
        // Accumulating a single bounded term grows at most linearly.
        if k == 1 && self.coin(0.2) {
            let (t, t_ops, gain) = self.term();
            if gain == 0 {
                return (format!("{target} += {} * {t}", lit_f(self.rng.gen_range(0.1..1.0))), t_ops + 2);
            }
        }
        (format!("{target} = {text}"), ops)
    }

    fn condition(&mut self) -> (String, usize) {
        let has_params = !self.nums.is_empty() || !self.strs.is_empty();
        if has_params && self.coin(self.cfg.raw_predicate_share) {
            let use_num = self.strs.is_empty() || (!self.nums.is_empty() && self.coin(0.85));
            if use_num {
                let (p, dtype, dist) = self.nums.choose(&mut self.rng).unwrap().clone();
                let v = draw_value(&dist, dtype, 1, &mut self.rng);
                let cmp = ["<", ">", "<=", ">="].choose(&mut self.rng).unwrap();
                return (format!("{p} {cmp} {}", lit_value(&v)), 1);
            }
            let (s, dist) = self.strs.choose(&mut self.rng).unwrap().clone();
            let v = draw_value(&dist, Dtype::String, 1, &mut self.rng);
            let cmp = if self.coin(0.7) { "==" } else { "!=" };
            return (format!("{s} {cmp} {}", lit_value(&v)), 1);
        }
        let v = self.var();
        match self.rng.gen_range(0..4) {
            0 => (format!("math.sin({v}) > {}", lit_f(self.rng.gen_range(-0.9..0.9))), 2),
            1 => {
                let w = self.var();
                (format!("{v} > {w}"), 1)
            }
            2 => (format!("abs({v}) < {}", lit_f(self.rng.gen_range(0.1..5.0))), 2),
            _ => {
                let w = self.var();
                (format!("{v} - {w} < {}", lit_f(self.rng.gen_range(-2.0..2.0))), 2)
            }
        }
    }

    /// A trip-count expression; nested loops stay short.
    fn bound(&mut self, depth: usize) -> (String, usize) {
        let ints: Vec<String> =
            self.nums.iter().filter(|(_, d, _)| *d == Dtype::Int).map(|(n, _, _)| n.clone()).collect();
        let r = self.rng.gen_range(0..10);
        if r < 3 && !ints.is_empty() {
            (ints.choose(&mut self.rng).unwrap().clone(), 0)
        } else if r < 6 {
            let v = self.var();
            (format!("int(abs({v})) % 5 + 1"), 4)
        } else {
            let hi = if depth > 0 { 5 } else { 10 };
            (self.rng.gen_range(1..=hi).to_string(), 0)
        }
    }

    fn push(&mut self, node: Node, slot: Slot) -> usize {
        let id = self.nodes.len();
        self.nodes.push(node);
        let list = match slot {
            Slot::Top => &mut self.top,
            Slot::Then(i) => match &mut self.nodes[i] {
                Node::If { then_b, .. } => then_b,
                _ => unreachable!(),
            },
            Slot::Else(i) => match &mut self.nodes[i] {
                Node::If { else_b: Some(b), .. } => b,
                _ => unreachable!(),
            },
            Slot::Body(i) => match &mut self.nodes[i] {
                Node::For { body, .. } | Node::While { body, .. } => body,
                _ => unreachable!(),
            },
        };
        let at = self.rng.gen_range(0..=list.len());
        list.insert(at, id);
        id
    }

    fn pick_slot(&mut self, loop_only: bool) -> (Slot, usize) {
        let candidates: Vec<(Slot, usize)> =
            self.slots.iter().copied().filter(|&(_, d)| !loop_only || d < crate::udfscript::MAX_LOOP_DEPTH).collect();
        if candidates.len() == 1 || self.coin(0.55) {
            candidates[0]
        } else {
            *candidates[1..].choose(&mut self.rng).unwrap()
        }
    }

    fn add_line(&mut self, slot: Slot, max_terms: usize) -> usize {
        let (text, ops) = self.line(max_terms);
        self.push(Node::Line(text), slot);
        ops
    }

    fn add_branch(&mut self) -> usize {
        let (slot, depth) = self.pick_slot(false);
        let (cond, mut ops) = self.condition();
        let else_b = self.coin(0.5).then(Vec::new);
        let has_else = else_b.is_some();
        let id = self.push(Node::If { cond, then_b: Vec::new(), else_b }, slot);
        self.slots.push((Slot::Then(id), depth));
        ops += self.add_line(Slot::Then(id), 2);
        if has_else {
            self.slots.push((Slot::Else(id), depth));
            ops += self.add_line(Slot::Else(id), 2);
        }
        ops
    }

    fn add_loop(&mut self) -> usize {
        let (slot, depth) = self.pick_slot(true);
        let (bound, mut ops) = self.bound(depth);
        let n = self.loops;
        self.loops += 1;
        let node = if self.coin(0.3) {
            ops += 2;
            Node::While { counter: format!("k{n}"), bound, body: Vec::new() }
        } else {
            Node::For { var: format!("i{n}"), bound, body: Vec::new() }
        };
        let id = self.push(node, slot);
        self.slots.push((Slot::Body(id), depth + 1));
        ops + self.add_line(Slot::Body(id), 2)
    }

    fn render(&self, ids: &[usize], indent: usize, out: &mut String) {
        let pad = "    ".repeat(indent);
        for &id in ids {
            match &self.nodes[id] {
                Node::Line(t) => out.push_str(&format!("{pad}{t}\n")),
                Node::If { cond, then_b, else_b } => {
                    out.push_str(&format!("{pad}if {cond}:\n"));
                    self.render(then_b, indent + 1, out);
                    if let Some(e) = else_b {
                        out.push_str(&format!("{pad}else:\n"));
                        self.render(e, indent + 1, out);
                    }
                }
                Node::For { var, bound, body } => {
                    out.push_str(&format!("{pad}for {var} in range({bound}):\n"));
                    self.render(body, indent + 1, out);
                }
                Node::While { counter, bound, body } => {
                    out.push_str(&format!("{pad}{counter} = 0\n{pad}while {counter} < {bound}:\n"));
                    self.render(body, indent + 1, out);
                    out.push_str(&format!("{pad}    {counter} += 1\n"));
                }
            }
        }
    }
}

fn is_data_column(c: &crate::datastore::ColumnSpec) -> bool {
    !matches!(c.distribution, Distribution::Serial | Distribution::Reference { .. })
}

/// Branch count with most mass on zero and one, restricted to the range.
fn sample_branches(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> usize {
    let (lo, hi) = (cfg.branches.lo, cfg.branches.hi);
    let weights: Vec<f64> = (lo..=hi).map(|k| [0.35, 0.35, 0.2, 0.1].get(k).copied().unwrap_or(0.05)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (k, w) in (lo..=hi).zip(&weights) {
        if u < *w {
            return k;
        }
        u -= w;
    }
    hi
}

/// Loops appear with the configured incidence unless the range forces them.
fn sample_loops(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> usize {
    let (lo, hi) = (cfg.loops.lo, cfg.loops.hi);
    if lo > 0 {
        rng.gen_range(lo..=hi)
    } else if hi > 0 && rng.gen_bool(cfg.loop_incidence) {
        rng.gen_range(1..=hi)
    } else {
        0
    }
}

fn choose_inputs(schema: &SchemaSpec, rng: &mut ChaCha8Rng) -> (TableSpec, Vec<usize>) {
    let usable = |t: &TableSpec, data_only: bool| {
        t.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.dtype != Dtype::Bool && (!data_only || is_data_column(c)))
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    };
    let numeric = |t: &TableSpec, cols: &[usize]| cols.iter().any(|&i| t.columns[i].dtype.is_numeric());
    let with_data: Vec<&TableSpec> = schema.tables.iter().filter(|t| numeric(t, &usable(t, true))).collect();
    let (table, pool) = match with_data.choose(rng) {
        Some(t) => (*t, usable(t, true)),
        None => {
            let t = schema.tables.choose(rng).expect("schema has a table");
            (t, usable(t, false))
        }
    };
    let n = rng.gen_range(1..=pool.len().min(4));
    let mut chosen: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
    if !numeric(table, &chosen) {
        let nums: Vec<usize> = pool.iter().copied().filter(|&i| table.columns[i].dtype.is_numeric()).collect();
        chosen[0] = *nums.choose(rng).unwrap();
    }
    chosen.sort_unstable();
    (table.clone(), chosen)
}

fn attempt(cfg: &GenConfig, schema: &SchemaSpec, rng: &mut ChaCha8Rng, simplify: bool) -> Option<GeneratedUdf> {
    let (table, cols) = choose_inputs(schema, rng);
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        nums: Vec::new(),
        strs: Vec::new(),
        vars: Vec::new(),
        nodes: Vec::new(),
        top: Vec::new(),
        slots: vec![(Slot::Top, 0)],
        loops: 0,
    };
    let mut params = Vec::new();
    for &i in &cols {
        let c = &table.columns[i];
        params.push(Param { name: c.name.clone(), dtype: c.dtype });
        match c.dtype {
            Dtype::String => g.strs.push((c.name.clone(), c.distribution.clone())),
            _ => g.nums.push((c.name.clone(), c.dtype, c.distribution.clone())),
        }
    }

    let (n_branches, n_loops) = if simplify {
        (cfg.branches.lo, cfg.loops.lo)
    } else {
        (sample_branches(cfg, rng), sample_loops(cfg, rng))
    };
    let (lo, hi) = (cfg.ops.lo.max(1) as f64, cfg.ops.hi.max(1) as f64);
    let target = (rng.gen_range(lo.ln()..=hi.ln())).exp().round() as usize;

    let n_vars = g.rng.gen_range(1..=3);
    let mut init = String::new();
    let mut ops = 0;
    for v in 0..n_vars {
        let name = format!("v{v}");
        let (t, t_ops, _) = if g.nums.is_empty() {
            let s = g.strs[0].0.clone();
            (format!("float(len({s}))"), 2, 0)
        } else {
            let p = g.nums.choose(&mut g.rng).unwrap().0.clone();
            match g.rng.gen_range(0..3) {
                0 => (format!("math.sin({p})"), 1, 0),
                1 => (format!("math.log(abs({p}) + 1.0)"), 3, 0),
                _ => (p, 0, 1),
            }
        };
        init.push_str(&format!("    {name} = {} * {t} + {}\n", lit_f(g.rng.gen_range(0.1..0.9)), lit_f(g.rng.gen_range(0.5..3.0))));
        ops += t_ops + 2;
        g.vars.push(name);
    }

    let mut structure: Vec<bool> = std::iter::repeat_n(true, n_loops).chain(std::iter::repeat_n(false, n_branches)).collect();
    structure.shuffle(&mut g.rng);
    for is_loop in structure {
        ops += if is_loop { g.add_loop() } else { g.add_branch() };
    }
    let ret = g.vars.join(" + ");
    ops += g.vars.len() - 1;
    while ops < target {
        let room = hi as usize - ops;
        if room < 2 {
            break;
        }
        let (slot, _) = g.pick_slot(false);
        let max_terms = if room >= 20 { 3 } else { 1 };
        let (text, l_ops) = g.line(max_terms);
        if ops + l_ops > hi as usize {
            continue;
        }
        g.push(Node::Line(text), slot);
        ops += l_ops;
    }

    let mut body = String::from("\n");
    body.push_str(&init);
    let top = g.top.clone();
    g.render(&top, 1, &mut body);
    body.push_str(&format!("    return {ret}\n"));
    let source = UdfSource { name: "udf".into(), params, body_text: body };
    let schema_cols: Vec<(String, Dtype)> = table.columns.iter().map(|c| (c.name.clone(), c.dtype)).collect();
    let ast = parse_udf(&source, &schema_cols).ok()?;
    let meta = structure_of(&ast);
    let in_range = |r: &super::IntRange, v: usize| v >= r.lo && v <= r.hi;
    (in_range(&cfg.ops, meta.ops) && meta.branches == n_branches && meta.loops == n_loops)
        .then(|| GeneratedUdf { source, table: table.name.clone(), meta })
}

/// Draws a UDF over the columns of one random table: inputs, then structure
/// (branch and loop counts), then statements from the operator vocabulary.
/// Attempts whose realized operation count misses the configured range are
/// redrawn; after repeated misses the structure falls back to the minimum.
pub fn gen_udf(cfg: &GenConfig, schema: &SchemaSpec, seed: u64) -> GeneratedUdf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..64 {
        if let Some(u) = attempt(cfg, schema, &mut rng, i >= 32) {
            return u;
        }
    }
    panic!("no UDF satisfies the configured operation range {:?}", cfg.ops)
}
