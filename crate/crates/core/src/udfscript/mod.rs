//! The scalar-UDF mini-language: a small, statically typed, Python-like
//! subset with one function per source file.
//!
//! Grammar summary:
//!
//! ```text
//! udf     := "def" NAME "(" param ("," param)* ")" ["->" type] ":" suite
//! param   := NAME ":" type            type := int | float | str | string | bool
//! suite   := stmt | NEWLINE INDENT stmt+ DEDENT
//! stmt    := NAME ("=" | "+=" | "-=" | "*=" | "/=") expr
//!          | "if" expr ":" suite ("elif" expr ":" suite)* ["else" ":" suite]
//!          | "for" NAME "in" "range" "(" expr ["," expr] ")" ":" suite
//!          | "while" expr ":" suite
//!          | "return" expr
//!          | expr
//! ```
//!
//! Expressions follow Python precedence: `or`, `and`, `not`, one comparison
//! (no chaining), `+ -`, `* / // %`, unary `-`, `**`, then postfix string
//! methods (`.upper() .lower() .strip() .replace(a, b)`) and slices `s[a:b]`.
//! Calls are limited to `math.{sqrt,log,exp,sin,cos,floor,ceil,pow}`,
//! `np.{add,subtract,multiply,divide,power,...}`, `abs`, `len`, `str`, `int`
//! and `float`.
//!
//! Static rules: a variable's type is fixed by its first assignment (an int
//! may be stored into a float variable); variables must be definitely
//! assigned before use; every path must return and all returns share one
//! type; no `return` inside loops; loops nest at most three deep.

mod ast;
mod hazards;
mod interp;
mod lexer;
mod parser;
mod pretty;

use thiserror::Error;

pub use ast::*;
pub use hazards::{analyze_hazards, ColumnHazard, HazardReport};
pub use interp::{
    interpret_udf, FaultKind, Interpreter, LoopLimit, RuntimeFault, TraceCounters, TraceSink, DEFAULT_LOOP_LIMIT,
};
pub use parser::{binary_type, parse_udf, parse_udf_text, MAX_LOOP_DEPTH};
pub use pretty::{expr_text, pretty_print};

pub(crate) use interp::compare as eval_compare;

/// Static errors; positions are 1-based line and column in the full source.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UdfError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("type error at {line}:{col}: {msg}")]
    Type { line: u32, col: u32, msg: String },
    #[error("unbound variable `{name}` at {line}:{col}")]
    UnboundVariable { name: String, line: u32, col: u32 },
    #[error("not every path of `{func}` returns ({line}:{col})")]
    MissingReturn { func: String, line: u32, col: u32 },
}
