//! Single-pass recursive-descent parser that also type-checks, resolves
//! variables to slots and verifies definite assignment and all-paths-return.

use std::collections::HashMap;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::UdfError;

pub const MAX_LOOP_DEPTH: usize = 3;

/// Parses and type-checks a UDF. Parameters are bound by name to columns of
/// `input_schema` (a qualified `table.column` also matches); an empty schema
/// skips binding checks.
pub fn parse_udf(source: &UdfSource, input_schema: &[(String, Dtype)]) -> Result<UdfAst, UdfError> {
    parse_udf_text(&source.text(), input_schema)
}

pub fn parse_udf_text(text: &str, input_schema: &[(String, Dtype)]) -> Result<UdfAst, UdfError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        slots: Vec::new(),
        names: HashMap::new(),
        defined: Vec::new(),
        next_id: 0,
        loop_depth: 0,
        out_dtype: None,
    };
    let ast = p.function()?;
    if !input_schema.is_empty() {
        bind_params(&ast, input_schema)?;
    }
    Ok(ast)
}

fn bind_params(ast: &UdfAst, schema: &[(String, Dtype)]) -> Result<(), UdfError> {
    for param in &ast.params {
        let col = schema.iter().find(|(name, _)| {
            name == &param.name || name.rsplit_once('.').is_some_and(|(_, c)| c == param.name)
        });
        match col {
            None => {
                return Err(UdfError::UnboundVariable { name: param.name.clone(), line: 1, col: 1 });
            }
            Some((name, dt)) if *dt != param.dtype => {
                return Err(UdfError::Type {
                    line: 1,
                    col: 1,
                    msg: format!("parameter `{}: {}` bound to column `{name}` of type {dt}", param.name, param.dtype),
                });
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Splits the `def` header off a UDF text. The body text keeps everything after
/// the header colon so that `text()` reproduces the input.
pub(crate) fn split_source(text: &str) -> Result<UdfSource, UdfError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        slots: Vec::new(),
        names: HashMap::new(),
        defined: Vec::new(),
        next_id: 0,
        loop_depth: 0,
        out_dtype: None,
    };
    let (name, params, _) = p.header()?;
    let colon = &p.toks[p.pos - 1];
    let offset = byte_offset(text, colon.line, colon.col) + 1;
    Ok(UdfSource { name, params, body_text: text[offset..].to_string() })
}

fn byte_offset(text: &str, line: u32, col: u32) -> usize {
    let mut l = 1;
    let mut c = 1;
    for (i, ch) in text.char_indices() {
        if l == line && c == col {
            return i;
        }
        if ch == '\n' {
            l += 1;
            c = 1;
        } else {
            c += 1;
        }
    }
    text.len()
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    slots: Vec<(String, Dtype)>,
    names: HashMap<String, Slot>,
    /// Definitely-assigned flags, indexed by slot.
    defined: Vec<bool>,
    next_id: StmtId,
    loop_depth: usize,
    out_dtype: Option<Dtype>,
}

type PResult<T> = Result<T, UdfError>;

fn expr(kind: ExprKind, dtype: Dtype) -> Expr {
    Expr { kind, dtype }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn advance(&mut self) -> &Token {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(UdfError::Syntax { line, col, msg: msg.into() })
    }

    fn type_err<T>(&self, at: (u32, u32), msg: impl Into<String>) -> PResult<T> {
        Err(UdfError::Type { line: at.0, col: at.1, msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.syntax(format!("expected {}, found {}", tok.describe(), self.peek().describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            other => self.syntax(format!("expected identifier, found {}", other.describe())),
        }
    }

    fn dtype_name(&mut self) -> PResult<Dtype> {
        let at = self.here();
        let name = self.ident()?;
        Dtype::parse(&name).map_or_else(|| self.type_err(at, format!("unknown type `{name}`")), Ok)
    }

    fn header(&mut self) -> PResult<(String, Vec<Param>, Option<Dtype>)> {
        while self.eat(&Tok::Newline) {}
        self.expect(Tok::Def)?;
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params: Vec<Param> = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let name = self.ident()?;
                if params.iter().any(|p| p.name == name) {
                    return self.syntax(format!("duplicate parameter `{name}`"));
                }
                self.expect(Tok::Colon)?;
                let dtype = self.dtype_name()?;
                params.push(Param { name, dtype });
                if !self.eat(&Tok::Comma) || *self.peek() == Tok::RParen {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        if params.is_empty() {
            return self.syntax("a UDF takes at least one parameter");
        }
        let ret = if self.eat(&Tok::Arrow) { Some(self.dtype_name()?) } else { None };
        self.expect(Tok::Colon)?;
        Ok((name, params, ret))
    }

    fn function(&mut self) -> PResult<UdfAst> {
        let (line, col) = {
            let mut i = self.pos;
            while self.toks[i].tok == Tok::Newline {
                i += 1;
            }
            (self.toks[i].line, self.toks[i].col)
        };
        let (name, params, ret) = self.header()?;
        for p in &params {
            self.declare(&p.name, p.dtype);
        }
        self.defined = vec![true; params.len()];
        self.out_dtype = ret;
        let (body, terminates) = self.suite()?;
        if !terminates {
            return Err(UdfError::MissingReturn { func: name, line, col });
        }
        while self.eat(&Tok::Newline) {}
        if *self.peek() != Tok::Eof {
            return self.syntax("expected a single function definition");
        }
        Ok(UdfAst {
            name,
            params,
            body,
            out_dtype: self.out_dtype.expect("terminating body has a return"),
            slots: std::mem::take(&mut self.slots),
            stmt_count: self.next_id,
        })
    }

    fn declare(&mut self, name: &str, dtype: Dtype) -> Slot {
        let slot = self.slots.len() as Slot;
        self.slots.push((name.to_string(), dtype));
        self.names.insert(name.to_string(), slot);
        slot
    }

    fn is_defined(&self, slot: Slot) -> bool {
        self.defined.get(slot as usize).copied().unwrap_or(false)
    }

    fn mark_defined(&mut self, slot: Slot) {
        let i = slot as usize;
        if self.defined.len() <= i {
            self.defined.resize(i + 1, false);
        }
        self.defined[i] = true;
    }

    fn next_id(&mut self) -> StmtId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Either an indented block or a single statement on the header line.
    /// Returns the statements and whether every path through them returns.
    fn suite(&mut self) -> PResult<(Vec<Stmt>, bool)> {
        if !self.eat(&Tok::Newline) {
            let (stmt, term) = self.statement()?;
            return Ok((vec![stmt], term));
        }
        if !self.eat(&Tok::Indent) {
            return self.syntax("expected an indented block");
        }
        let mut stmts = Vec::new();
        let mut terminated = false;
        while !self.eat(&Tok::Dedent) {
            if terminated {
                return self.syntax("unreachable code after return");
            }
            let (stmt, term) = self.statement()?;
            stmts.push(stmt);
            terminated = term;
        }
        Ok((stmts, terminated))
    }

    fn end_simple(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Newline => {
                self.advance();
                Ok(())
            }
            Tok::Else | Tok::Elif | Tok::Eof | Tok::Dedent => Ok(()),
            other => self.syntax(format!("expected end of line, found {}", other.describe())),
        }
    }

    fn statement(&mut self) -> PResult<(Stmt, bool)> {
        match self.peek() {
            Tok::If => {
                self.advance();
                self.if_rest()
            }
            Tok::For => self.for_stmt().map(|s| (s, false)),
            Tok::While => self.while_stmt().map(|s| (s, false)),
            Tok::Return => self.return_stmt().map(|s| (s, true)),
            Tok::Def => self.syntax("nested function definitions are not supported"),
            Tok::Elif | Tok::Else => self.syntax(format!("unexpected {}", self.peek().describe())),
            _ => self.simple().map(|s| (s, false)),
        }
    }

    /// Parses after `if`/`elif`; `elif` becomes a nested `If` in the else branch.
    fn if_rest(&mut self) -> PResult<(Stmt, bool)> {
        let id = self.next_id();
        let at = self.here();
        let cond = self.expression()?;
        if cond.dtype != Dtype::Bool {
            return self.type_err(at, format!("condition must be bool, found {}", cond.dtype));
        }
        self.expect(Tok::Colon)?;
        let before = self.defined.clone();
        let (then_body, then_term) = self.suite()?;
        let after_then = std::mem::replace(&mut self.defined, before);
        let (else_body, else_term) = if self.eat(&Tok::Elif) {
            let (s, t) = self.if_rest()?;
            (vec![s], t)
        } else if self.eat(&Tok::Else) {
            self.expect(Tok::Colon)?;
            self.suite()?
        } else {
            (Vec::new(), false)
        };
        let after_else = std::mem::take(&mut self.defined);
        self.defined = match (then_term, else_term) {
            (true, _) => after_else,
            (false, true) => after_then,
            (false, false) => {
                let n = after_then.len().max(after_else.len());
                (0..n)
                    .map(|i| after_then.get(i).copied().unwrap_or(false) && after_else.get(i).copied().unwrap_or(false))
                    .collect()
            }
        };
        let stmt = Stmt { id, kind: StmtKind::If { cond, then_body, else_body } };
        Ok((stmt, then_term && else_term))
    }

    fn enter_loop(&mut self) -> PResult<()> {
        if self.loop_depth >= MAX_LOOP_DEPTH {
            return self.syntax(format!("loop nesting deeper than {MAX_LOOP_DEPTH}"));
        }
        self.loop_depth += 1;
        Ok(())
    }

    fn loop_body(&mut self) -> PResult<Vec<Stmt>> {
        let before = self.defined.clone();
        let (body, _) = self.suite()?;
        self.defined = before;
        self.loop_depth -= 1;
        Ok(body)
    }

    fn int_expr(&mut self, what: &str) -> PResult<Expr> {
        let at = self.here();
        let e = self.expression()?;
        if e.dtype != Dtype::Int {
            return self.type_err(at, format!("{what} must be int, found {}", e.dtype));
        }
        Ok(e)
    }

    fn for_stmt(&mut self) -> PResult<Stmt> {
        self.advance();
        let id = self.next_id();
        let at = self.here();
        let var = self.ident()?;
        self.expect(Tok::In)?;
        if *self.peek() != Tok::Ident("range".into()) {
            return self.syntax("only `for <var> in range(...)` loops are supported");
        }
        self.advance();
        self.expect(Tok::LParen)?;
        let first = self.int_expr("range bound")?;
        let (start, stop) = if self.eat(&Tok::Comma) {
            (Some(first), self.int_expr("range bound")?)
        } else {
            (None, first)
        };
        self.expect(Tok::RParen)?;
        self.expect(Tok::Colon)?;
        let slot = match self.names.get(&var) {
            Some(&s) if self.slots[s as usize].1 != Dtype::Int => {
                return self.type_err(at, format!("loop variable `{var}` is {}", self.slots[s as usize].1));
            }
            Some(&s) => s,
            None => self.declare(&var, Dtype::Int),
        };
        self.enter_loop()?;
        let before = self.defined.clone();
        self.mark_defined(slot);
        let body = self.loop_body()?;
        self.defined = before;
        Ok(Stmt { id, kind: StmtKind::For { var, slot, start, stop, body } })
    }

    fn while_stmt(&mut self) -> PResult<Stmt> {
        self.advance();
        let id = self.next_id();
        let at = self.here();
        let cond = self.expression()?;
        if cond.dtype != Dtype::Bool {
            return self.type_err(at, format!("condition must be bool, found {}", cond.dtype));
        }
        self.expect(Tok::Colon)?;
        self.enter_loop()?;
        let body = self.loop_body()?;
        Ok(Stmt { id, kind: StmtKind::While { cond, body } })
    }

    fn return_stmt(&mut self) -> PResult<Stmt> {
        if self.loop_depth > 0 {
            return self.syntax("return inside a loop is not supported");
        }
        self.advance();
        let id = self.next_id();
        let at = self.here();
        let value = self.expression()?;
        match self.out_dtype {
            None => self.out_dtype = Some(value.dtype),
            Some(dt) if dt != value.dtype => {
                return self.type_err(at, format!("return type {} differs from earlier return type {dt}", value.dtype));
            }
            Some(_) => {}
        }
        self.end_simple()?;
        Ok(Stmt { id, kind: StmtKind::Return { value } })
    }

    fn simple(&mut self) -> PResult<Stmt> {
        let id = self.next_id();
        let aug = match self.peek_at(1) {
            Tok::Assign => Some(None),
            Tok::PlusEq => Some(Some(BinOp::Add)),
            Tok::MinusEq => Some(Some(BinOp::Sub)),
            Tok::StarEq => Some(Some(BinOp::Mul)),
            Tok::SlashEq => Some(Some(BinOp::Div)),
            _ => None,
        };
        let stmt = match (self.peek().clone(), aug) {
            (Tok::Ident(name), Some(op)) => {
                let at = self.here();
                self.advance();
                self.advance();
                let rhs_at = self.here();
                let mut value = self.expression()?;
                if let Some(op) = op {
                    let target = self.var_ref(&name, at)?;
                    value = self.binary(op, target, value, rhs_at)?;
                }
                let slot = match self.names.get(&name) {
                    Some(&s) => {
                        let dt = self.slots[s as usize].1;
                        if dt != value.dtype && !(dt == Dtype::Float && value.dtype == Dtype::Int) {
                            return self.type_err(rhs_at, format!("cannot assign {} to `{name}` of type {dt}", value.dtype));
                        }
                        s
                    }
                    None => self.declare(&name, value.dtype),
                };
                self.mark_defined(slot);
                Stmt { id, kind: StmtKind::Assign { name, slot, value } }
            }
            _ => {
                let value = self.expression()?;
                if matches!(self.peek(), Tok::Assign) {
                    return self.syntax("can only assign to a variable");
                }
                Stmt { id, kind: StmtKind::Expr { value } }
            }
        };
        self.end_simple()?;
        Ok(stmt)
    }

    fn var_ref(&self, name: &str, at: (u32, u32)) -> PResult<Expr> {
        match self.names.get(name) {
            Some(&slot) if self.is_defined(slot) => {
                Ok(expr(ExprKind::Var { name: name.to_string(), slot }, self.slots[slot as usize].1))
            }
            _ => Err(UdfError::UnboundVariable { name: name.to_string(), line: at.0, col: at.1 }),
        }
    }

    fn expression(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn logic_operand(&self, e: &Expr, at: (u32, u32), op: &str) -> PResult<()> {
        if e.dtype != Dtype::Bool {
            return self.type_err(at, format!("operand of `{op}` must be bool, found {}", e.dtype));
        }
        Ok(())
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let at = self.here();
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            let op_at = self.here();
            self.advance();
            let rhs = self.and_expr()?;
            self.logic_operand(&lhs, at, "or")?;
            self.logic_operand(&rhs, op_at, "or")?;
            lhs = expr(ExprKind::Logic { op: BoolOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) }, Dtype::Bool);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let at = self.here();
        let mut lhs = self.not_expr()?;
        while *self.peek() == Tok::And {
            let op_at = self.here();
            self.advance();
            let rhs = self.not_expr()?;
            self.logic_operand(&lhs, at, "and")?;
            self.logic_operand(&rhs, op_at, "and")?;
            lhs = expr(ExprKind::Logic { op: BoolOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) }, Dtype::Bool);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Not {
            let at = self.here();
            self.advance();
            let operand = self.not_expr()?;
            self.logic_operand(&operand, at, "not")?;
            return Ok(expr(ExprKind::Unary { op: UnaryOp::Not, operand: Box::new(operand) }, Dtype::Bool));
        }
        self.comparison()
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Gt => CmpOp::Gt,
            Tok::Le => CmpOp::Le,
            Tok::Ge => CmpOp::Ge,
            Tok::EqEq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            _ => return None,
        })
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let lhs = self.arith()?;
        let Some(op) = self.cmp_op() else { return Ok(lhs) };
        let at = self.here();
        self.advance();
        let rhs = self.arith()?;
        if self.cmp_op().is_some() {
            return self.syntax("chained comparisons are not supported");
        }
        let ok = (lhs.dtype.is_numeric() && rhs.dtype.is_numeric()) || lhs.dtype == rhs.dtype;
        if !ok {
            return self.type_err(at, format!("cannot compare {} with {}", lhs.dtype, rhs.dtype));
        }
        Ok(expr(ExprKind::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, Dtype::Bool))
    }

    fn binary(&self, op: BinOp, lhs: Expr, rhs: Expr, at: (u32, u32)) -> PResult<Expr> {
        let dtype = binary_type(op, lhs.dtype, rhs.dtype).map_or_else(
            || self.type_err(at, format!("unsupported operand types for `{}`: {} and {}", op.symbol(), lhs.dtype, rhs.dtype)),
            Ok,
        )?;
        Ok(expr(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, dtype))
    }

    fn arith(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let at = self.here();
            self.advance();
            let rhs = self.term()?;
            lhs = self.binary(op, lhs, rhs, at)?;
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::DoubleSlash => BinOp::FloorDiv,
                Tok::Percent => BinOp::Mod,
                _ => return Ok(lhs),
            };
            let at = self.here();
            self.advance();
            let rhs = self.factor()?;
            lhs = self.binary(op, lhs, rhs, at)?;
        }
    }

    /// Unary minus; applied to a numeric literal it folds into the literal.
    fn factor(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Minus {
            let at = self.here();
            self.advance();
            let operand = self.factor()?;
            return match operand.kind {
                ExprKind::Lit { value: Value::Int(v) } => match v.checked_neg() {
                    Some(n) => Ok(expr(ExprKind::Lit { value: Value::Int(n) }, Dtype::Int)),
                    None => self.type_err(at, "integer literal out of range"),
                },
                ExprKind::Lit { value: Value::Float(v) } => Ok(expr(ExprKind::Lit { value: Value::Float(-v) }, Dtype::Float)),
                _ if operand.dtype.is_numeric() => {
                    let dt = operand.dtype;
                    Ok(expr(ExprKind::Unary { op: UnaryOp::Neg, operand: Box::new(operand) }, dt))
                }
                _ => self.type_err(at, format!("bad operand type for unary `-`: {}", operand.dtype)),
            };
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = self.postfix()?;
        if *self.peek() == Tok::DoubleStar {
            let at = self.here();
            self.advance();
            let exp = self.factor()?;
            return self.binary(BinOp::Pow, base, exp, at);
        }
        Ok(base)
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            match self.peek() {
                Tok::Dot => {
                    let at = self.here();
                    self.advance();
                    let name = self.ident()?;
                    let method = match name.as_str() {
                        "upper" => StrMethod::Upper,
                        "lower" => StrMethod::Lower,
                        "strip" => StrMethod::Strip,
                        "replace" => StrMethod::Replace,
                        _ => return self.type_err(at, format!("unknown method `{name}`")),
                    };
                    if e.dtype != Dtype::String {
                        return self.type_err(at, format!("`.{name}()` needs a string, found {}", e.dtype));
                    }
                    let args = self.call_args()?;
                    let want = if method == StrMethod::Replace { 2 } else { 0 };
                    if args.len() != want {
                        return self.type_err(at, format!("`.{name}()` takes {want} arguments, got {}", args.len()));
                    }
                    if args.iter().any(|a| a.dtype != Dtype::String) {
                        return self.type_err(at, format!("`.{name}()` arguments must be strings"));
                    }
                    e = expr(ExprKind::Method { method, recv: Box::new(e), args }, Dtype::String);
                }
                Tok::LBracket => {
                    let at = self.here();
                    self.advance();
                    if e.dtype != Dtype::String {
                        return self.type_err(at, format!("cannot slice {}", e.dtype));
                    }
                    let start = if *self.peek() == Tok::Colon { None } else { Some(Box::new(self.int_expr("slice bound")?)) };
                    if *self.peek() != Tok::Colon {
                        return self.syntax("indexing is not supported, use a slice `s[a:b]`");
                    }
                    self.advance();
                    let stop = if *self.peek() == Tok::RBracket { None } else { Some(Box::new(self.int_expr("slice bound")?)) };
                    self.expect(Tok::RBracket)?;
                    e = expr(ExprKind::Slice { target: Box::new(e), start, stop }, Dtype::String);
                }
                _ => return Ok(e),
            }
        }
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        while *self.peek() != Tok::RParen {
            args.push(self.expression()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let at = self.here();
        let tok = self.peek().clone();
        match tok {
            Tok::Int(v) => {
                self.advance();
                Ok(expr(ExprKind::Lit { value: Value::Int(v) }, Dtype::Int))
            }
            Tok::Float(v) => {
                self.advance();
                Ok(expr(ExprKind::Lit { value: Value::Float(v) }, Dtype::Float))
            }
            Tok::Str(s) => {
                self.advance();
                Ok(expr(ExprKind::Lit { value: Value::str(s) }, Dtype::String))
            }
            Tok::True | Tok::False => {
                self.advance();
                Ok(expr(ExprKind::Lit { value: Value::Bool(tok == Tok::True) }, Dtype::Bool))
            }
            Tok::LParen => {
                self.advance();
                let e = self.expression()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.advance();
                let is_var = self.names.contains_key(&name);
                if !is_var && matches!(name.as_str(), "math" | "np" | "numpy") && *self.peek() == Tok::Dot {
                    self.advance();
                    let fname = self.ident()?;
                    let Some(func) = LibFunc::lookup(Some(&name), &fname) else {
                        return self.type_err(at, format!("unknown library function `{name}.{fname}`"));
                    };
                    let args = self.call_args()?;
                    return self.lib_call(func, args, at);
                }
                if *self.peek() == Tok::LParen {
                    let args = self.call_args()?;
                    return self.builtin(&name, args, at);
                }
                self.var_ref(&name, at)
            }
            other => self.syntax(format!("expected an expression, found {}", other.describe())),
        }
    }

    fn lib_call(&self, func: LibFunc, args: Vec<Expr>, at: (u32, u32)) -> PResult<Expr> {
        if args.len() != func.arity() {
            return self.type_err(at, format!("`{}` takes {} arguments, got {}", func.qualified(), func.arity(), args.len()));
        }
        if let Some(a) = args.iter().find(|a| !a.dtype.is_numeric()) {
            return self.type_err(at, format!("`{}` needs numeric arguments, found {}", func.qualified(), a.dtype));
        }
        let all_int = args.iter().all(|a| a.dtype == Dtype::Int);
        let dtype = match func {
            LibFunc::Floor | LibFunc::Ceil => Dtype::Int,
            LibFunc::Abs => args[0].dtype,
            LibFunc::Add | LibFunc::Subtract | LibFunc::Multiply | LibFunc::Power if all_int => Dtype::Int,
            _ => Dtype::Float,
        };
        Ok(expr(ExprKind::Call { func, args }, dtype))
    }

    fn builtin(&self, name: &str, mut args: Vec<Expr>, at: (u32, u32)) -> PResult<Expr> {
        let one = |args: &mut Vec<Expr>| -> PResult<Box<Expr>> {
            if args.len() != 1 {
                return self.type_err(at, format!("`{name}` takes 1 argument, got {}", args.len()));
            }
            Ok(Box::new(args.pop().unwrap()))
        };
        match name {
            "abs" => self.lib_call(LibFunc::Abs, args, at),
            "len" => {
                let arg = one(&mut args)?;
                if arg.dtype != Dtype::String {
                    return self.type_err(at, format!("`len` needs a string, found {}", arg.dtype));
                }
                Ok(expr(ExprKind::Len { arg }, Dtype::Int))
            }
            "str" | "int" | "float" => {
                let to = Dtype::parse(name).unwrap();
                let arg = one(&mut args)?;
                Ok(expr(ExprKind::Cast { to, arg }, to))
            }
            _ => self.type_err(at, format!("unknown function `{name}`")),
        }
    }
}

/// Result type of a binary arithmetic operator, or `None` if ill-typed.
pub fn binary_type(op: BinOp, l: Dtype, r: Dtype) -> Option<Dtype> {
    use Dtype::*;
    match (op, l, r) {
        (BinOp::Add, String, String) => Some(String),
        (_, a, b) if !a.is_numeric() || !b.is_numeric() => None,
        (BinOp::Div, _, _) => Some(Float),
        (_, Int, Int) => Some(Int),
        _ => Some(Float),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<UdfAst, UdfError> {
        parse_udf_text(src, &[])
    }

    #[test]
    fn identity() {
        let ast = parse("def f(x:int): return x").unwrap();
        assert_eq!(ast.out_dtype, Dtype::Int);
        assert_eq!(ast.body.len(), 1);
        assert!(matches!(ast.body[0].kind, StmtKind::Return { .. }));
    }

    #[test]
    fn one_line_branch() {
        let ast = parse("def f(x:int): if x < 5: return x+1 else: return x*2").unwrap();
        let StmtKind::If { cond, then_body, else_body } = &ast.body[0].kind else { panic!() };
        assert!(matches!(cond.kind, ExprKind::Compare { op: CmpOp::Lt, .. }));
        assert_eq!(then_body.len(), 1);
        assert_eq!(else_body.len(), 1);
        let mut returns = 0;
        ast.for_each_stmt(|s, _| returns += matches!(s.kind, StmtKind::Return { .. }) as usize);
        assert_eq!(returns, 2);
        assert_eq!(ast.stmt_count, 3);
    }

    #[test]
    fn unbound_variable() {
        let err = parse("def f(s:string): return x").unwrap_err();
        assert!(matches!(&err, UdfError::UnboundVariable { name, .. } if name == "x"), "{err:?}");
    }

    #[test]
    fn missing_return() {
        let err = parse("def f(x: int):\n    if x > 0:\n        return 1\n").unwrap_err();
        assert!(matches!(err, UdfError::MissingReturn { .. }), "{err:?}");
    }

    #[test]
    fn type_errors_carry_position() {
        let err = parse("def f(x: int, s: str):\n    return x + s\n").unwrap_err();
        assert!(matches!(err, UdfError::Type { line: 2, col: 14, .. }), "{err:?}");
        assert!(matches!(parse("def f(x: int):\n    if x:\n        return 1\n    return 2\n"), Err(UdfError::Type { .. })));
        assert!(matches!(parse("def f(x: int):\n    return 1\n    return 2.0\n"), Err(UdfError::Syntax { .. })));
        assert!(matches!(
            parse("def f(x: int):\n    if x > 1:\n        return 1\n    return 2.0\n"),
            Err(UdfError::Type { .. })
        ));
    }

    #[test]
    fn elif_desugars_to_nested_if() {
        let ast = parse(
            "def f(x: int):\n    if x < 0:\n        return 0\n    elif x < 10:\n        return 1\n    else:\n        return 2\n",
        )
        .unwrap();
        let StmtKind::If { else_body, .. } = &ast.body[0].kind else { panic!() };
        assert_eq!(else_body.len(), 1);
        assert!(matches!(else_body[0].kind, StmtKind::If { .. }));
    }

    #[test]
    fn definite_assignment() {
        let ok = "def f(x: int):\n    if x > 0:\n        y = 1\n    else:\n        y = 2\n    return y\n";
        assert!(parse(ok).is_ok());
        let bad = "def f(x: int):\n    if x > 0:\n        y = 1\n    return y\n";
        assert!(matches!(parse(bad), Err(UdfError::UnboundVariable { .. })));
        let in_loop = "def f(x: int):\n    for i in range(x):\n        y = i\n    return y\n";
        assert!(matches!(parse(in_loop), Err(UdfError::UnboundVariable { .. })));
        let early = "def f(x: int):\n    if x > 0:\n        return 0\n    else:\n        y = 2\n    return y\n";
        assert!(parse(early).is_ok());
    }

    #[test]
    fn loop_rules() {
        let deep = "def f(x: int):\n    s = 0\n    for a in range(2):\n        for b in range(2):\n            for c in range(2):\n                for d in range(2):\n                    s += 1\n    return s\n";
        assert!(matches!(parse(deep), Err(UdfError::Syntax { .. })));
        let ret_in_loop = "def f(x: int):\n    for i in range(3):\n        return i\n    return 0\n";
        assert!(matches!(parse(ret_in_loop), Err(UdfError::Syntax { .. })));
        let while_ok = "def f(x: int):\n    n = x\n    while n > 1:\n        n = n // 2\n    return n\n";
        assert!(parse(while_ok).is_ok());
    }

    #[test]
    fn widening_assignment_only() {
        assert!(parse("def f(x: int):\n    y = 0.0\n    y = x\n    return y\n").is_ok());
        assert!(matches!(parse("def f(x: float):\n    y = 0\n    y = x\n    return y\n"), Err(UdfError::Type { .. })));
    }

    #[test]
    fn library_and_string_ops() {
        let src = "def f(x: float, s: str):\n    a = math.sqrt(abs(x)) + np.add(x, 1)\n    t = s.upper().replace(\"A\", \"b\") + s[1:3]\n    return a + len(t) + float(str(math.floor(x)))\n";
        let ast = parse(src).unwrap();
        assert_eq!(ast.out_dtype, Dtype::Float);
        assert!(matches!(parse("def f(x: float):\n    return math.nope(x)\n"), Err(UdfError::Type { .. })));
        assert!(matches!(parse("def f(x: float):\n    return g(x)\n"), Err(UdfError::Type { .. })));
    }

    #[test]
    fn negative_literals_fold_but_power_binds_tighter() {
        let ast = parse("def f(x: int):\n    return -2 ** 2\n").unwrap();
        let StmtKind::Return { value } = &ast.body[0].kind else { panic!() };
        assert!(matches!(value.kind, ExprKind::Unary { op: UnaryOp::Neg, .. }));
        let ast = parse("def f(x: int):\n    return x - -3\n").unwrap();
        let StmtKind::Return { value } = &ast.body[0].kind else { panic!() };
        let ExprKind::Binary { rhs, .. } = &value.kind else { panic!() };
        assert_eq!(rhs.kind, ExprKind::Lit { value: Value::Int(-3) });
    }

    #[test]
    fn schema_binding() {
        let src = UdfSource::from_text("def f(x: int):\n    return x\n").unwrap();
        assert!(parse_udf(&src, &[("t.x".into(), Dtype::Int)]).is_ok());
        assert!(matches!(parse_udf(&src, &[("y".into(), Dtype::Int)]), Err(UdfError::UnboundVariable { .. })));
        assert!(matches!(parse_udf(&src, &[("x".into(), Dtype::Float)]), Err(UdfError::Type { .. })));
    }

    #[test]
    fn header_checks() {
        assert!(matches!(parse("def f():\n    return 1\n"), Err(UdfError::Syntax { .. })));
        assert!(matches!(parse("def f(x: int, x: int):\n    return 1\n"), Err(UdfError::Syntax { .. })));
        assert!(matches!(parse("def f(x: int):\n    return x\ndef g(y: int):\n    return y\n"), Err(UdfError::Syntax { .. })));
    }

    #[test]
    fn split_source_preserves_text() {
        for text in ["def f(x: int):\n    return x\n", "def f(x:int): return x"] {
            let src = split_source(text).unwrap();
            assert_eq!(src.text(), text.replace("x:int", "x: int"));
        }
    }
}
