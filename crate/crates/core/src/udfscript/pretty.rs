//! Canonical source rendering. Expressions are fully parenthesized so that
//! re-parsing yields an identical AST.

use std::fmt::Write;

use super::ast::*;

/// Renders the body (everything after the header colon) with 4-space indents.
pub fn body_text(ast: &UdfAst) -> String {
    let mut out = String::from("\n");
    block(&mut out, &ast.body, 1);
    out
}

/// Renders a complete UDF, header included.
pub fn pretty_print(ast: &UdfAst) -> String {
    ast.source().text()
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn block(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        stmt(out, s, depth, false);
    }
}

fn stmt(out: &mut String, s: &Stmt, depth: usize, as_elif: bool) {
    if !as_elif {
        indent(out, depth);
    }
    match &s.kind {
        StmtKind::Assign { name, value, .. } => {
            let _ = writeln!(out, "{name} = {}", expr_text(value));
        }
        StmtKind::If { cond, then_body, else_body } => {
            let _ = writeln!(out, "{} {}:", if as_elif { "elif" } else { "if" }, expr_text(cond));
            block(out, then_body, depth + 1);
            match else_body.as_slice() {
                [] => {}
                [nested @ Stmt { kind: StmtKind::If { .. }, .. }] => {
                    indent(out, depth);
                    stmt(out, nested, depth, true);
                }
                body => {
                    indent(out, depth);
                    out.push_str("else:\n");
                    block(out, body, depth + 1);
                }
            }
        }
        StmtKind::For { var, start, stop, body, .. } => {
            match start {
                Some(lo) => {
                    let _ = writeln!(out, "for {var} in range({}, {}):", expr_text(lo), expr_text(stop));
                }
                None => {
                    let _ = writeln!(out, "for {var} in range({}):", expr_text(stop));
                }
            }
            block(out, body, depth + 1);
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while {}:", expr_text(cond));
            block(out, body, depth + 1);
        }
        StmtKind::Return { value } => {
            let _ = writeln!(out, "return {}", expr_text(value));
        }
        StmtKind::Expr { value } => {
            let _ = writeln!(out, "{}", expr_text(value));
        }
    }
}

pub fn expr_text(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e);
    s
}

fn literal(out: &mut String, v: &Value) {
    match v {
        Value::Int(i) if *i < 0 => {
            let _ = write!(out, "({i})");
        }
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) if f.is_sign_negative() => {
            let _ = write!(out, "({f:?})");
        }
        Value::Float(f) => {
            let _ = write!(out, "{f:?}");
        }
        Value::Bool(b) => out.push_str(if *b { "True" } else { "False" }),
        Value::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '\r' => out.push_str("\\r"),
                    '\0' => out.push_str("\\0"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
        Value::Null => out.push_str("None"),
    }
}

fn args(out: &mut String, list: &[Expr]) {
    out.push('(');
    for (i, a) in list.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr(out, a);
    }
    out.push(')');
}

fn expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Var { name, .. } => out.push_str(name),
        ExprKind::Lit { value } => literal(out, value),
        ExprKind::Unary { op, operand } => {
            out.push_str(match op {
                UnaryOp::Neg => "(-",
                UnaryOp::Not => "(not ",
            });
            expr(out, operand);
            out.push(')');
        }
        ExprKind::Binary { op, lhs, rhs } => infix(out, lhs, op.symbol(), rhs),
        ExprKind::Compare { op, lhs, rhs } => infix(out, lhs, op.symbol(), rhs),
        ExprKind::Logic { op, lhs, rhs } => {
            infix(out, lhs, if *op == BoolOp::And { "and" } else { "or" }, rhs)
        }
        ExprKind::Call { func, args: list } => {
            out.push_str(func.qualified());
            args(out, list);
        }
        ExprKind::Method { method, recv, args: list } => {
            expr(out, recv);
            out.push('.');
            out.push_str(method.name());
            args(out, list);
        }
        ExprKind::Len { arg } => {
            out.push_str("len");
            args(out, std::slice::from_ref(arg));
        }
        ExprKind::Cast { to, arg } => {
            out.push_str(header_type(*to));
            args(out, std::slice::from_ref(arg));
        }
        ExprKind::Slice { target, start, stop } => {
            expr(out, target);
            out.push('[');
            if let Some(s) = start {
                expr(out, s);
            }
            out.push(':');
            if let Some(s) = stop {
                expr(out, s);
            }
            out.push(']');
        }
    }
}

fn infix(out: &mut String, lhs: &Expr, op: &str, rhs: &Expr) {
    out.push('(');
    expr(out, lhs);
    out.push(' ');
    out.push_str(op);
    out.push(' ');
    expr(out, rhs);
    out.push(')');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::udfscript::parse_udf_text;

    fn roundtrip(src: &str) {
        let a = parse_udf_text(src, &[]).unwrap();
        let text = pretty_print(&a);
        let b = parse_udf_text(&text, &[]).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(a, b, "{text}");
        assert_eq!(pretty_print(&b), text);
    }

    #[test]
    fn roundtrips() {
        roundtrip("def f(x:int): if x < 5: return x+1 else: return x*2");
        roundtrip("def f(x: float):\n    return (-2.0) ** 2 + -x - -0.0 + 1e-9 * 3e30\n");
        roundtrip("def f(x: int):\n    return -2 ** 2\n");
        roundtrip(
            "def f(x: int, s: str):\n    t = s.upper()[1:] + \"q\\\"\\n\"\n    if x < 0:\n        y = 1\n    elif x < 5:\n        y = 2\n    elif x < 9:\n        y = 3\n    else:\n        y = len(t)\n    for i in range(1, x):\n        y += i\n    while not (y < 3) and True:\n        y = y // 2\n    return str(y) + t\n",
        );
        roundtrip("def f(x: float):\n    z = np.sqrt(math.pow(abs(x), 2.0))\n    z\n    return float(math.floor(z))\n");
    }

    #[test]
    fn elif_is_rendered() {
        let a = parse_udf_text(
            "def f(x: int):\n    if x < 0:\n        return 0\n    else:\n        if x < 3:\n            return 1\n        else:\n            return 2\n",
            &[],
        )
        .unwrap();
        assert!(pretty_print(&a).contains("elif (x < 3):"));
    }
}
