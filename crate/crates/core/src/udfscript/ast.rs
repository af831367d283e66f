//! Typed syntax tree for the UDF mini-language.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Scalar data type of a column, parameter or expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Int,
    Float,
    String,
    Bool,
}

impl Dtype {
    pub const ALL: [Dtype; 4] = [Dtype::Int, Dtype::Float, Dtype::String, Dtype::Bool];

    pub fn name(self) -> &'static str {
        match self {
            Dtype::Int => "int",
            Dtype::Float => "float",
            Dtype::String => "string",
            Dtype::Bool => "bool",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Dtype::Int | Dtype::Float)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Accepts the spellings used in UDF headers and CSV headers.
    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "int" => Some(Dtype::Int),
            "float" => Some(Dtype::Float),
            "str" | "string" => Some(Dtype::String),
            "bool" => Some(Dtype::Bool),
            _ => None,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A runtime scalar. `Null` only appears in table data; UDF code never produces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
}

impl Value {
    pub fn str(s: impl Into<Arc<str>>) -> Value {
        Value::Str(s.into())
    }

    pub fn dtype(&self) -> Option<Dtype> {
        match self {
            Value::Null => None,
            Value::Bool(_) => Some(Dtype::Bool),
            Value::Int(_) => Some(Dtype::Int),
            Value::Float(_) => Some(Dtype::Float),
            Value::Str(_) => Some(Dtype::String),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Numeric view; bools count as 0/1.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Bool(b) => Some(*b as i64 as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Total order used by comparisons, histograms and sorting. Numbers compare
    /// numerically across int/float; values of different kinds order by kind.
    pub fn total_cmp(&self, other: &Value) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Less,
            (_, Value::Null) => Ordering::Greater,
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Str(_), _) => Ordering::Greater,
            (_, Value::Str(_)) => Ordering::Less,
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (a, b) => a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("None"),
            Value::Bool(true) => f.write_str("True"),
            Value::Bool(false) => f.write_str("False"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub dtype: Dtype,
}

/// A UDF as written: header plus unparsed body text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UdfSource {
    pub name: String,
    pub params: Vec<Param>,
    pub body_text: String,
}

impl UdfSource {
    /// Splits a full UDF text into header and body.
    pub fn from_text(text: &str) -> Result<UdfSource, super::UdfError> {
        super::parser::split_source(text)
    }

    /// Full source text, `def` line included. `body_text` is everything after
    /// the header colon, so it starts with a newline for block bodies.
    pub fn text(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, header_type(p.dtype)))
            .collect();
        format!("def {}({}):{}", self.name, params.join(", "), self.body_text)
    }
}

pub(crate) fn header_type(dtype: Dtype) -> &'static str {
    match dtype {
        Dtype::String => "str",
        other => other.name(),
    }
}

pub type StmtId = u32;

/// Index into the interpreter's variable slots.
pub type Slot = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn parse(s: &str) -> Option<CmpOp> {
        CmpOp::ALL.into_iter().find(|op| op.symbol() == s)
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }

    /// The operator with its operands swapped (`a < b` == `b > a`).
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Le => ord != Greater,
            CmpOp::Ge => ord != Less,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Not,
}

/// Library functions callable from UDF code (`math.*`, `np.*`, `abs`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LibFunc {
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Floor,
    Ceil,
    Pow,
    Abs,
    Add,
    Subtract,
    Multiply,
    Divide,
    Power,
}

impl LibFunc {
    pub const ALL: [LibFunc; 14] = [
        LibFunc::Sqrt,
        LibFunc::Log,
        LibFunc::Exp,
        LibFunc::Sin,
        LibFunc::Cos,
        LibFunc::Floor,
        LibFunc::Ceil,
        LibFunc::Pow,
        LibFunc::Abs,
        LibFunc::Add,
        LibFunc::Subtract,
        LibFunc::Multiply,
        LibFunc::Divide,
        LibFunc::Power,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LibFunc::Sqrt => "sqrt",
            LibFunc::Log => "log",
            LibFunc::Exp => "exp",
            LibFunc::Sin => "sin",
            LibFunc::Cos => "cos",
            LibFunc::Floor => "floor",
            LibFunc::Ceil => "ceil",
            LibFunc::Pow => "pow",
            LibFunc::Abs => "abs",
            LibFunc::Add => "add",
            LibFunc::Subtract => "subtract",
            LibFunc::Multiply => "multiply",
            LibFunc::Divide => "divide",
            LibFunc::Power => "power",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            LibFunc::Pow
            | LibFunc::Add
            | LibFunc::Subtract
            | LibFunc::Multiply
            | LibFunc::Divide
            | LibFunc::Power => 2,
            _ => 1,
        }
    }

    /// Canonical spelling used by the pretty printer.
    pub fn qualified(self) -> &'static str {
        match self {
            LibFunc::Sqrt => "math.sqrt",
            LibFunc::Log => "math.log",
            LibFunc::Exp => "math.exp",
            LibFunc::Sin => "math.sin",
            LibFunc::Cos => "math.cos",
            LibFunc::Floor => "math.floor",
            LibFunc::Ceil => "math.ceil",
            LibFunc::Pow => "math.pow",
            LibFunc::Abs => "abs",
            LibFunc::Add => "np.add",
            LibFunc::Subtract => "np.subtract",
            LibFunc::Multiply => "np.multiply",
            LibFunc::Divide => "np.divide",
            LibFunc::Power => "np.power",
        }
    }

    pub(crate) fn lookup(module: Option<&str>, name: &str) -> Option<LibFunc> {
        let f = LibFunc::ALL.into_iter().find(|f| f.name() == name)?;
        match (module, f) {
            (None, LibFunc::Abs) => Some(f),
            (None, _) => None,
            (Some("math"), LibFunc::Sqrt | LibFunc::Log | LibFunc::Exp | LibFunc::Sin)
            | (Some("math"), LibFunc::Cos | LibFunc::Floor | LibFunc::Ceil | LibFunc::Pow) => Some(f),
            (Some("np" | "numpy"), LibFunc::Pow) => None,
            (Some("np" | "numpy"), _) => Some(f),
            _ => None,
        }
    }
}

/// String operations that are not plain operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrMethod {
    Upper,
    Lower,
    Strip,
    Replace,
}

impl StrMethod {
    pub fn name(self) -> &'static str {
        match self {
            StrMethod::Upper => "upper",
            StrMethod::Lower => "lower",
            StrMethod::Strip => "strip",
            StrMethod::Replace => "replace",
        }
    }
}

/// Operation vocabulary used for COMP node features and flat baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
    Neg,
    Concat,
    Upper,
    Lower,
    Strip,
    Replace,
    Len,
    Substr,
    Cast,
    Compare,
    Logic,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::FloorDiv,
        OpKind::Mod,
        OpKind::Pow,
        OpKind::Neg,
        OpKind::Concat,
        OpKind::Upper,
        OpKind::Lower,
        OpKind::Strip,
        OpKind::Replace,
        OpKind::Len,
        OpKind::Substr,
        OpKind::Cast,
        OpKind::Compare,
        OpKind::Logic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::FloorDiv => "floordiv",
            OpKind::Mod => "mod",
            OpKind::Pow => "pow",
            OpKind::Neg => "neg",
            OpKind::Concat => "concat",
            OpKind::Upper => "upper",
            OpKind::Lower => "lower",
            OpKind::Strip => "strip",
            OpKind::Replace => "replace",
            OpKind::Len => "len",
            OpKind::Substr => "substr",
            OpKind::Cast => "cast",
            OpKind::Compare => "compare",
            OpKind::Logic => "logic",
        }
    }

    /// Arithmetic and string operations, the ones counted as "computations".
    pub fn is_computation(self) -> bool {
        !matches!(self, OpKind::Cast | OpKind::Compare | OpKind::Logic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "e", rename_all = "snake_case")]
pub enum ExprKind {
    Var { name: String, slot: Slot },
    Lit { value: Value },
    Unary { op: UnaryOp, operand: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Compare { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Logic { op: BoolOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { func: LibFunc, args: Vec<Expr> },
    Method { method: StrMethod, recv: Box<Expr>, args: Vec<Expr> },
    Len { arg: Box<Expr> },
    Slice { target: Box<Expr>, start: Option<Box<Expr>>, stop: Option<Box<Expr>> },
    Cast { to: Dtype, arg: Box<Expr> },
}

impl Expr {
    /// Calls `f` on this expression and every subexpression, parents first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Var { .. } | ExprKind::Lit { .. } => {}
            ExprKind::Unary { operand, .. } => operand.walk(f),
            ExprKind::Binary { lhs, rhs, .. }
            | ExprKind::Compare { lhs, rhs, .. }
            | ExprKind::Logic { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            ExprKind::Method { recv, args, .. } => {
                recv.walk(f);
                args.iter().for_each(|a| a.walk(f));
            }
            ExprKind::Len { arg } | ExprKind::Cast { arg, .. } => arg.walk(f),
            ExprKind::Slice { target, start, stop } => {
                target.walk(f);
                if let Some(s) = start {
                    s.walk(f);
                }
                if let Some(s) = stop {
                    s.walk(f);
                }
            }
        }
    }

    /// The operation this node performs, if it is an operation at all.
    pub fn op_kind(&self) -> Option<OpKind> {
        Some(match &self.kind {
            ExprKind::Var { .. } | ExprKind::Lit { .. } | ExprKind::Call { .. } => return None,
            ExprKind::Unary { op: UnaryOp::Neg, .. } => OpKind::Neg,
            ExprKind::Unary { op: UnaryOp::Not, .. } => OpKind::Logic,
            ExprKind::Binary { op, .. } => match op {
                BinOp::Add if self.dtype == Dtype::String => OpKind::Concat,
                BinOp::Add => OpKind::Add,
                BinOp::Sub => OpKind::Sub,
                BinOp::Mul => OpKind::Mul,
                BinOp::Div => OpKind::Div,
                BinOp::FloorDiv => OpKind::FloorDiv,
                BinOp::Mod => OpKind::Mod,
                BinOp::Pow => OpKind::Pow,
            },
            ExprKind::Compare { .. } => OpKind::Compare,
            ExprKind::Logic { .. } => OpKind::Logic,
            ExprKind::Method { method, .. } => match method {
                StrMethod::Upper => OpKind::Upper,
                StrMethod::Lower => OpKind::Lower,
                StrMethod::Strip => OpKind::Strip,
                StrMethod::Replace => OpKind::Replace,
            },
            ExprKind::Len { .. } => OpKind::Len,
            ExprKind::Slice { .. } => OpKind::Substr,
            ExprKind::Cast { .. } => OpKind::Cast,
        })
    }

    /// Immediate children in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Var { .. } | ExprKind::Lit { .. } => vec![],
            ExprKind::Unary { operand, .. } => vec![operand],
            ExprKind::Binary { lhs, rhs, .. }
            | ExprKind::Compare { lhs, rhs, .. }
            | ExprKind::Logic { lhs, rhs, .. } => vec![lhs, rhs],
            ExprKind::Call { args, .. } => args.iter().collect(),
            ExprKind::Method { recv, args, .. } => {
                std::iter::once(recv.as_ref()).chain(args.iter()).collect()
            }
            ExprKind::Len { arg } | ExprKind::Cast { arg, .. } => vec![arg],
            ExprKind::Slice { target, start, stop } => std::iter::once(target.as_ref())
                .chain(start.as_deref())
                .chain(stop.as_deref())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stmt {
    pub id: StmtId,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "s", rename_all = "snake_case")]
pub enum StmtKind {
    Assign { name: String, slot: Slot, value: Expr },
    /// `elif` chains are desugared into a nested `If` as the only else statement.
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
    /// `for var in range(start, stop)`; `range(n)` has `start == None`.
    For { var: String, slot: Slot, start: Option<Expr>, stop: Expr, body: Vec<Stmt> },
    While { cond: Expr, body: Vec<Stmt> },
    Return { value: Expr },
    Expr { value: Expr },
}

impl Stmt {
    pub fn is_loop(&self) -> bool {
        matches!(self.kind, StmtKind::For { .. } | StmtKind::While { .. })
    }

    /// Expressions owned directly by this statement (not by nested statements).
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Assign { value, .. } | StmtKind::Return { value } | StmtKind::Expr { value } => {
                vec![value]
            }
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::For { start, stop, .. } => start.iter().chain(std::iter::once(stop)).collect(),
        }
    }

    pub fn bodies(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::If { then_body, else_body, .. } => vec![then_body, else_body],
            StmtKind::For { body, .. } | StmtKind::While { body, .. } => vec![body],
            _ => vec![],
        }
    }
}

/// A parsed, type-checked scalar UDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfAst {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub out_dtype: Dtype,
    /// Variable slots; the first `params.len()` slots hold the parameters.
    pub slots: Vec<(String, Dtype)>,
    /// Statement ids are dense in `0..stmt_count`, assigned in pre-order.
    pub stmt_count: u32,
}

impl UdfAst {
    /// Visits every statement in pre-order together with its loop nesting depth.
    pub fn for_each_stmt<'a>(&'a self, mut f: impl FnMut(&'a Stmt, usize)) {
        fn go<'a>(stmts: &'a [Stmt], depth: usize, f: &mut impl FnMut(&'a Stmt, usize)) {
            for s in stmts {
                f(s, depth);
                let inner = depth + s.is_loop() as usize;
                for body in s.bodies() {
                    go(body, inner, f);
                }
            }
        }
        go(&self.body, 0, &mut f);
    }

    pub fn find_stmt(&self, id: StmtId) -> Option<&Stmt> {
        let mut found = None;
        self.for_each_stmt(|s, _| {
            if s.id == id {
                found = Some(s);
            }
        });
        found
    }

    /// Slots assigned anywhere in the body (loop variables included).
    pub fn assigned_slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        self.for_each_stmt(|s, _| match &s.kind {
            StmtKind::Assign { slot, .. } | StmtKind::For { slot, .. } => out.push(*slot),
            _ => {}
        });
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn source(&self) -> UdfSource {
        UdfSource {
            name: self.name.clone(),
            params: self.params.clone(),
            body_text: super::pretty::body_text(self),
        }
    }
}
