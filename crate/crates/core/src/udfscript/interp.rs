//! Tracing tree-walking interpreter.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::*;

pub const DEFAULT_LOOP_LIMIT: u64 = 1_000_000;

/// What happens when a single loop entry exceeds its iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopLimit {
    Fault(u64),
    /// Stop the loop silently after this many iterations.
    Truncate(u64),
}

impl Default for LoopLimit {
    fn default() -> Self {
        LoopLimit::Fault(DEFAULT_LOOP_LIMIT)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("math domain error in `{0}`")]
    MathDomain(&'static str),
    #[error("numeric overflow")]
    Overflow,
    #[error("loop exceeded {0} iterations")]
    LoopGuard(u64),
    #[error("parameter `{0}` is NULL")]
    NullInput(String),
    #[error("parameter `{param}` expects {expected}")]
    BadInput { param: String, expected: Dtype },
    #[error("cannot convert {0:?}")]
    InvalidCast(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}{}", .stmt.map(|s| format!(" at statement {s}")).unwrap_or_default())]
pub struct RuntimeFault {
    /// Faulting statement; `None` for input validation.
    pub stmt: Option<StmtId>,
    pub kind: FaultKind,
}

/// Execution counts indexed by statement id. A loop statement's visit count is
/// its number of entries; its iterations are counted separately.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCounters {
    pub visits: Vec<u64>,
    /// `[true, false]` outcomes; zero for non-branch statements.
    pub branch_outcomes: Vec<[u64; 2]>,
    pub loop_iterations: Vec<u64>,
}

impl TraceCounters {
    pub fn new(stmt_count: u32) -> Self {
        let n = stmt_count as usize;
        TraceCounters { visits: vec![0; n], branch_outcomes: vec![[0, 0]; n], loop_iterations: vec![0; n] }
    }

    pub fn for_ast(ast: &UdfAst) -> Self {
        Self::new(ast.stmt_count)
    }

    pub fn clear(&mut self) {
        self.visits.fill(0);
        self.branch_outcomes.fill([0, 0]);
        self.loop_iterations.fill(0);
    }

    pub fn add(&mut self, other: &TraceCounters) {
        for (a, b) in self.visits.iter_mut().zip(&other.visits) {
            *a += b;
        }
        for (a, b) in self.branch_outcomes.iter_mut().zip(&other.branch_outcomes) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.loop_iterations.iter_mut().zip(&other.loop_iterations) {
            *a += b;
        }
    }

    /// True iff every branch's outcomes sum to its visits.
    pub fn is_conserved(&self, ast: &UdfAst) -> bool {
        let mut ok = true;
        ast.for_each_stmt(|s, _| {
            if matches!(s.kind, StmtKind::If { .. }) {
                let [t, f] = self.branch_outcomes[s.id as usize];
                ok &= t + f == self.visits[s.id as usize];
            }
        });
        ok
    }
}

/// Receives execution events. `()` discards them.
pub trait TraceSink {
    fn visit(&mut self, id: StmtId);
    fn branch(&mut self, id: StmtId, taken: bool);
    fn iterations(&mut self, id: StmtId, n: u64);
}

impl TraceSink for () {
    #[inline]
    fn visit(&mut self, _: StmtId) {}
    #[inline]
    fn branch(&mut self, _: StmtId, _: bool) {}
    #[inline]
    fn iterations(&mut self, _: StmtId, _: u64) {}
}

impl TraceSink for TraceCounters {
    #[inline]
    fn visit(&mut self, id: StmtId) {
        self.visits[id as usize] += 1;
    }
    #[inline]
    fn branch(&mut self, id: StmtId, taken: bool) {
        self.branch_outcomes[id as usize][(!taken) as usize] += 1;
    }
    #[inline]
    fn iterations(&mut self, id: StmtId, n: u64) {
        self.loop_iterations[id as usize] += n;
    }
}

/// Interprets one row and returns the value with a fresh trace.
pub fn interpret_udf(ast: &UdfAst, row: &[Value]) -> Result<(Value, TraceCounters), RuntimeFault> {
    let mut trace = TraceCounters::for_ast(ast);
    let value = Interpreter::new().run(ast, row, &mut trace)?;
    Ok((value, trace))
}

/// Reusable interpreter state; keeps its variable slots between rows.
#[derive(Debug, Clone, Default)]
pub struct Interpreter {
    env: Vec<Value>,
    limit: LoopLimit,
}

type Eval<T> = Result<T, FaultKind>;

enum Flow {
    Next,
    Return(Value),
}

impl Interpreter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_limit(limit: LoopLimit) -> Self {
        Interpreter { env: Vec::new(), limit }
    }

    /// Runs the UDF on `row` (parameter values in declaration order).
    pub fn run<T: TraceSink>(&mut self, ast: &UdfAst, row: &[Value], trace: &mut T) -> Result<Value, RuntimeFault> {
        self.bind(ast, row).map_err(|kind| RuntimeFault { stmt: None, kind })?;
        match self.block(&ast.body, trace)? {
            Flow::Return(v) => Ok(v),
            Flow::Next => unreachable!("parser guarantees every path returns"),
        }
    }

    fn bind(&mut self, ast: &UdfAst, row: &[Value]) -> Eval<()> {
        // Non-parameter slots start at the zero of their type so a slot's
        // runtime type always matches its declared type.
        self.env.clear();
        self.env.extend(ast.slots.iter().map(|(_, dt)| zero_of(*dt)));
        for (i, p) in ast.params.iter().enumerate() {
            let v = match (row.get(i), p.dtype) {
                (None, dt) => return Err(FaultKind::BadInput { param: p.name.clone(), expected: dt }),
                (Some(Value::Null), _) => return Err(FaultKind::NullInput(p.name.clone())),
                (Some(Value::Int(v)), Dtype::Float) => Value::Float(*v as f64),
                (Some(v), dt) if v.dtype() == Some(dt) => v.clone(),
                (Some(_), dt) => return Err(FaultKind::BadInput { param: p.name.clone(), expected: dt }),
            };
            self.env[i] = v;
        }
        Ok(())
    }

    fn block<T: TraceSink>(&mut self, stmts: &[Stmt], trace: &mut T) -> Result<Flow, RuntimeFault> {
        for s in stmts {
            if let Flow::Return(v) = self.stmt(s, trace)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn stmt<T: TraceSink>(&mut self, s: &Stmt, trace: &mut T) -> Result<Flow, RuntimeFault> {
        let fault = |kind| RuntimeFault { stmt: Some(s.id), kind };
        trace.visit(s.id);
        match &s.kind {
            StmtKind::Assign { slot, value, .. } => {
                let mut v = self.eval(value).map_err(fault)?;
                if let (Value::Int(i), Value::Float(_)) = (&v, &self.env[*slot as usize]) {
                    v = Value::Float(*i as f64);
                }
                self.env[*slot as usize] = v;
                Ok(Flow::Next)
            }
            StmtKind::If { cond, then_body, else_body } => {
                let taken = self.eval_bool(cond).map_err(fault)?;
                trace.branch(s.id, taken);
                self.block(if taken { then_body } else { else_body }, trace)
            }
            StmtKind::For { slot, start, stop, body, .. } => {
                let lo = match start {
                    Some(e) => self.eval_int(e).map_err(fault)?,
                    None => 0,
                };
                let hi = self.eval_int(stop).map_err(fault)?;
                let planned = if hi > lo { hi.abs_diff(lo) } else { 0 };
                let n = match self.limit {
                    LoopLimit::Fault(max) if planned > max => return Err(fault(FaultKind::LoopGuard(max))),
                    LoopLimit::Fault(_) => planned,
                    LoopLimit::Truncate(max) => planned.min(max),
                };
                trace.iterations(s.id, n);
                for k in 0..n {
                    self.env[*slot as usize] = Value::Int(lo + k as i64);
                    self.block(body, trace)?;
                }
                Ok(Flow::Next)
            }
            StmtKind::While { cond, body } => {
                let mut n = 0u64;
                while self.eval_bool(cond).map_err(fault)? {
                    match self.limit {
                        LoopLimit::Fault(max) if n >= max => return Err(fault(FaultKind::LoopGuard(max))),
                        LoopLimit::Truncate(max) if n >= max => break,
                        _ => {}
                    }
                    n += 1;
                    self.block(body, trace)?;
                }
                trace.iterations(s.id, n);
                Ok(Flow::Next)
            }
            StmtKind::Return { value } => Ok(Flow::Return(self.eval(value).map_err(fault)?)),
            StmtKind::Expr { value } => {
                self.eval(value).map_err(fault)?;
                Ok(Flow::Next)
            }
        }
    }

    fn eval_bool(&mut self, e: &Expr) -> Eval<bool> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            other => unreachable!("type checker admitted non-bool condition {other:?}"),
        }
    }

    fn eval_int(&mut self, e: &Expr) -> Eval<i64> {
        match self.eval(e)? {
            Value::Int(v) => Ok(v),
            other => unreachable!("type checker admitted non-int {other:?}"),
        }
    }

    fn eval(&mut self, e: &Expr) -> Eval<Value> {
        Ok(match &e.kind {
            ExprKind::Var { slot, .. } => self.env[*slot as usize].clone(),
            ExprKind::Lit { value } => value.clone(),
            ExprKind::Unary { op: UnaryOp::Not, operand } => Value::Bool(!self.eval_bool(operand)?),
            ExprKind::Unary { op: UnaryOp::Neg, operand } => match self.eval(operand)? {
                Value::Int(v) => Value::Int(v.checked_neg().ok_or(FaultKind::Overflow)?),
                Value::Float(v) => Value::Float(-v),
                other => unreachable!("neg of {other:?}"),
            },
            ExprKind::Binary { op, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                binary(*op, &a, &b)?
            }
            ExprKind::Compare { op, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                Value::Bool(compare(*op, &a, &b))
            }
            ExprKind::Logic { op, lhs, rhs } => {
                let a = self.eval_bool(lhs)?;
                Value::Bool(match op {
                    BoolOp::And => a && self.eval_bool(rhs)?,
                    BoolOp::Or => a || self.eval_bool(rhs)?,
                })
            }
            ExprKind::Call { func, args } => {
                let a = self.eval(&args[0])?;
                let b = match args.get(1) {
                    Some(x) => Some(self.eval(x)?),
                    None => None,
                };
                call(*func, &a, b.as_ref())?
            }
            ExprKind::Method { method, recv, args } => {
                let r = self.eval(recv)?;
                let s = r.as_str().expect("string receiver");
                Value::str(match method {
                    StrMethod::Upper => s.to_uppercase(),
                    StrMethod::Lower => s.to_lowercase(),
                    StrMethod::Strip => s.trim().to_string(),
                    StrMethod::Replace => {
                        let from = self.eval(&args[0])?;
                        let to = self.eval(&args[1])?;
                        s.replace(from.as_str().unwrap(), to.as_str().unwrap())
                    }
                })
            }
            ExprKind::Len { arg } => {
                let v = self.eval(arg)?;
                Value::Int(v.as_str().unwrap().chars().count() as i64)
            }
            ExprKind::Slice { target, start, stop } => {
                let t = self.eval(target)?;
                let lo = match start {
                    Some(e) => Some(self.eval_int(e)?),
                    None => None,
                };
                let hi = match stop {
                    Some(e) => Some(self.eval_int(e)?),
                    None => None,
                };
                Value::str(slice(t.as_str().unwrap(), lo, hi))
            }
            ExprKind::Cast { to, arg } => cast(*to, self.eval(arg)?)?,
        })
    }
}

fn zero_of(dtype: Dtype) -> Value {
    match dtype {
        Dtype::Int => Value::Int(0),
        Dtype::Float => Value::Float(0.0),
        Dtype::String => Value::str(""),
        Dtype::Bool => Value::Bool(false),
    }
}

fn num(v: &Value) -> f64 {
    v.as_f64().expect("numeric operand")
}

fn float_result(v: f64, a: f64, b: f64) -> Eval<Value> {
    if v.is_infinite() && a.is_finite() && b.is_finite() {
        Err(FaultKind::Overflow)
    } else {
        Ok(Value::Float(v))
    }
}

fn int_pow(a: i64, b: i64) -> Eval<i64> {
    if b < 0 {
        return Err(FaultKind::MathDomain("pow"));
    }
    match a {
        0 => Ok((b == 0) as i64),
        1 => Ok(1),
        -1 => Ok(if b % 2 == 0 { 1 } else { -1 }),
        _ => u32::try_from(b).ok().and_then(|e| a.checked_pow(e)).ok_or(FaultKind::Overflow),
    }
}

fn float_pow(a: f64, b: f64) -> Eval<Value> {
    if a == 0.0 && b < 0.0 {
        return Err(FaultKind::DivisionByZero);
    }
    if a < 0.0 && b.is_finite() && b.fract() != 0.0 {
        return Err(FaultKind::MathDomain("pow"));
    }
    float_result(a.powf(b), a, b)
}

/// Floor division and modulo with the sign conventions of the source language.
fn int_floordiv(a: i64, b: i64) -> Eval<i64> {
    if b == 0 {
        return Err(FaultKind::DivisionByZero);
    }
    let q = a.checked_div(b).ok_or(FaultKind::Overflow)?;
    Ok(if a % b != 0 && ((a < 0) != (b < 0)) { q - 1 } else { q })
}

fn int_mod(a: i64, b: i64) -> Eval<i64> {
    if b == 0 {
        return Err(FaultKind::DivisionByZero);
    }
    let r = a.checked_rem(b).unwrap_or(0);
    Ok(if r != 0 && ((r < 0) != (b < 0)) { r + b } else { r })
}

fn float_mod(a: f64, b: f64) -> f64 {
    let r = a % b;
    if r != 0.0 && ((r < 0.0) != (b < 0.0)) {
        r + b
    } else {
        r
    }
}

pub(crate) fn binary(op: BinOp, a: &Value, b: &Value) -> Eval<Value> {
    if let (Value::Str(x), Value::Str(y)) = (a, b) {
        let mut s = String::with_capacity(x.len() + y.len());
        s.push_str(x);
        s.push_str(y);
        return Ok(Value::Str(Arc::from(s)));
    }
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let (x, y) = (*x, *y);
        return Ok(match op {
            BinOp::Add => Value::Int(x.checked_add(y).ok_or(FaultKind::Overflow)?),
            BinOp::Sub => Value::Int(x.checked_sub(y).ok_or(FaultKind::Overflow)?),
            BinOp::Mul => Value::Int(x.checked_mul(y).ok_or(FaultKind::Overflow)?),
            BinOp::Div => {
                if y == 0 {
                    return Err(FaultKind::DivisionByZero);
                }
                Value::Float(x as f64 / y as f64)
            }
            BinOp::FloorDiv => Value::Int(int_floordiv(x, y)?),
            BinOp::Mod => Value::Int(int_mod(x, y)?),
            BinOp::Pow => Value::Int(int_pow(x, y)?),
        });
    }
    let (x, y) = (num(a), num(b));
    match op {
        BinOp::Add => Ok(Value::Float(x + y)),
        BinOp::Sub => Ok(Value::Float(x - y)),
        BinOp::Mul => Ok(Value::Float(x * y)),
        BinOp::Div | BinOp::FloorDiv | BinOp::Mod if y == 0.0 => Err(FaultKind::DivisionByZero),
        BinOp::Div => Ok(Value::Float(x / y)),
        BinOp::FloorDiv => Ok(Value::Float((x / y).floor())),
        BinOp::Mod => Ok(Value::Float(float_mod(x, y))),
        BinOp::Pow => float_pow(x, y),
    }
}

pub(crate) fn compare(op: CmpOp, a: &Value, b: &Value) -> bool {
    let ord = match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => num(a).partial_cmp(&num(b)),
    };
    match ord {
        Some(o) => op.holds(o),
        None => op == CmpOp::Ne,
    }
}

fn float_to_int(v: f64, func: &'static str) -> Eval<i64> {
    if v.is_nan() {
        return Err(FaultKind::MathDomain(func));
    }
    // i64::MAX as f64 rounds up to 2^63, which is out of range.
    if !(-9.223_372_036_854_776e18..9.223_372_036_854_776e18).contains(&v) {
        return Err(FaultKind::Overflow);
    }
    Ok(v as i64)
}

pub(crate) fn call(func: LibFunc, a: &Value, b: Option<&Value>) -> Eval<Value> {
    let unary_float = |f: fn(f64) -> f64| Value::Float(f(num(a)));
    match func {
        LibFunc::Sqrt => {
            let x = num(a);
            if x < 0.0 {
                return Err(FaultKind::MathDomain("sqrt"));
            }
            Ok(Value::Float(x.sqrt()))
        }
        LibFunc::Log => {
            let x = num(a);
            if x <= 0.0 {
                return Err(FaultKind::MathDomain("log"));
            }
            Ok(Value::Float(x.ln()))
        }
        LibFunc::Exp => {
            let x = num(a);
            float_result(x.exp(), x, 0.0)
        }
        LibFunc::Sin | LibFunc::Cos => {
            if num(a).is_infinite() {
                return Err(FaultKind::MathDomain(func.name()));
            }
            Ok(unary_float(if func == LibFunc::Sin { f64::sin } else { f64::cos }))
        }
        LibFunc::Floor | LibFunc::Ceil => match a {
            Value::Int(v) => Ok(Value::Int(*v)),
            _ => {
                let x = num(a);
                let r = if func == LibFunc::Floor { x.floor() } else { x.ceil() };
                if x.is_infinite() {
                    return Err(FaultKind::Overflow);
                }
                Ok(Value::Int(float_to_int(r, func.name())?))
            }
        },
        LibFunc::Pow => {
            let (x, y) = (num(a), num(b.unwrap()));
            if x == 0.0 && y < 0.0 {
                return Err(FaultKind::MathDomain("pow"));
            }
            float_pow(x, y)
        }
        LibFunc::Abs => match a {
            Value::Int(v) => Ok(Value::Int(v.checked_abs().ok_or(FaultKind::Overflow)?)),
            _ => Ok(Value::Float(num(a).abs())),
        },
        LibFunc::Add => binary(BinOp::Add, a, b.unwrap()),
        LibFunc::Subtract => binary(BinOp::Sub, a, b.unwrap()),
        LibFunc::Multiply => binary(BinOp::Mul, a, b.unwrap()),
        LibFunc::Divide => binary(BinOp::Div, a, b.unwrap()),
        LibFunc::Power => binary(BinOp::Pow, a, b.unwrap()),
    }
}

fn slice(s: &str, start: Option<i64>, stop: Option<i64>) -> String {
    let chars: Vec<char> = s.chars().collect();
    let n = chars.len() as i64;
    let norm = |i: i64| if i < 0 { (i + n).max(0) } else { i.min(n) };
    let lo = start.map_or(0, norm);
    let hi = stop.map_or(n, norm);
    if lo >= hi {
        return String::new();
    }
    chars[lo as usize..hi as usize].iter().collect()
}

fn cast(to: Dtype, v: Value) -> Eval<Value> {
    Ok(match (to, v) {
        (Dtype::String, v) => Value::str(v.to_string()),
        (Dtype::Int, Value::Int(i)) => Value::Int(i),
        (Dtype::Int, Value::Bool(b)) => Value::Int(b as i64),
        (Dtype::Int, Value::Float(f)) => {
            if f.is_infinite() {
                return Err(FaultKind::Overflow);
            }
            Value::Int(float_to_int(f.trunc(), "int")?)
        }
        (Dtype::Int, Value::Str(s)) => {
            Value::Int(s.trim().parse().map_err(|_| FaultKind::InvalidCast(s.to_string()))?)
        }
        (Dtype::Float, Value::Str(s)) => {
            Value::Float(s.trim().parse().map_err(|_| FaultKind::InvalidCast(s.to_string()))?)
        }
        (Dtype::Float, v) => Value::Float(num(&v)),
        (Dtype::Bool, v) => unreachable!("no bool cast in the grammar: {v:?}"),
        (_, Value::Null) => unreachable!("null inside UDF evaluation"),
    })
}
