//! Indentation-aware tokenizer.

use super::UdfError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Def,
    If,
    Elif,
    Else,
    For,
    In,
    While,
    Return,
    And,
    Or,
    Not,
    True,
    False,
    Plus,
    Minus,
    Star,
    Slash,
    DoubleSlash,
    Percent,
    DoubleStar,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    Ne,
    Assign,
    PlusEq,
    MinusEq,
    StarEq,
    SlashEq,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Dot,
    Arrow,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("float {v:?}"),
            Tok::Str(_) => "string literal".into(),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indent".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::Def => "def",
            Tok::If => "if",
            Tok::Elif => "elif",
            Tok::Else => "else",
            Tok::For => "for",
            Tok::In => "in",
            Tok::While => "while",
            Tok::Return => "return",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::True => "True",
            Tok::False => "False",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::DoubleSlash => "//",
            Tok::Percent => "%",
            Tok::DoubleStar => "**",
            Tok::Lt => "<",
            Tok::Gt => ">",
            Tok::Le => "<=",
            Tok::Ge => ">=",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Assign => "=",
            Tok::PlusEq => "+=",
            Tok::MinusEq => "-=",
            Tok::StarEq => "*=",
            Tok::SlashEq => "/=",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::Dot => ".",
            Tok::Arrow => "->",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "def" => Tok::Def,
        "if" => Tok::If,
        "elif" => Tok::Elif,
        "else" => Tok::Else,
        "for" => Tok::For,
        "in" => Tok::In,
        "while" => Tok::While,
        "return" => Tok::Return,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        "True" => Tok::True,
        "False" => Tok::False,
        _ => return None,
    })
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    out: Vec<Token>,
    indents: Vec<u32>,
    depth: u32,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, UdfError> {
    let mut lx = Lexer {
        chars: src.chars().collect(),
        pos: 0,
        line: 1,
        col: 1,
        out: Vec::new(),
        indents: vec![0],
        depth: 0,
    };
    lx.run()?;
    Ok(lx.out)
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, line: u32, col: u32, msg: impl Into<String>) -> UdfError {
        UdfError::Syntax { line, col, msg: msg.into() }
    }

    fn push(&mut self, tok: Tok, line: u32, col: u32) {
        self.out.push(Token { tok, line, col });
    }

    fn run(&mut self) -> Result<(), UdfError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                if !self.handle_indent()? {
                    break;
                }
                at_line_start = false;
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else { break };
            match c {
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '\\' if self.peek2() == Some('\n') => {
                    self.bump();
                    self.bump();
                }
                '#' => {
                    while !matches!(self.peek(), None | Some('\n')) {
                        self.bump();
                    }
                }
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        self.push(Tok::Newline, line, col);
                        at_line_start = true;
                    }
                }
                c if c.is_ascii_digit() => self.number(line, col)?,
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_alphanumeric() || c == '_' {
                            s.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    let tok = keyword(&s).unwrap_or(Tok::Ident(s));
                    self.push(tok, line, col);
                }
                '"' | '\'' => self.string(line, col)?,
                _ => self.punct(line, col)?,
            }
        }
        if self.depth > 0 {
            return Err(self.err(self.line, self.col, "unclosed parenthesis"));
        }
        let (line, col) = (self.line, self.col);
        if !matches!(self.out.last().map(|t| &t.tok), None | Some(Tok::Newline) | Some(Tok::Dedent)) {
            self.push(Tok::Newline, line, col);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(Tok::Dedent, line, col);
        }
        self.push(Tok::Eof, line, col);
        Ok(())
    }

    /// Measures the indentation of the next non-blank line and emits
    /// INDENT/DEDENT tokens. Returns false at end of input.
    fn handle_indent(&mut self) -> Result<bool, UdfError> {
        loop {
            let mut width = 0u32;
            while let Some(c) = self.peek() {
                match c {
                    ' ' => width += 1,
                    '\t' => width = (width / 8 + 1) * 8,
                    '\r' => {}
                    _ => break,
                }
                self.bump();
            }
            match self.peek() {
                None => return Ok(false),
                Some('\n') => {
                    self.bump();
                    continue;
                }
                Some('#') => {
                    while !matches!(self.peek(), None | Some('\n')) {
                        self.bump();
                    }
                    continue;
                }
                Some(_) => {}
            }
            let (line, col) = (self.line, self.col);
            let top = *self.indents.last().unwrap();
            if width > top {
                self.indents.push(width);
                self.push(Tok::Indent, line, col);
            } else {
                while width < *self.indents.last().unwrap() {
                    self.indents.pop();
                    self.push(Tok::Dedent, line, col);
                }
                if width != *self.indents.last().unwrap() {
                    return Err(self.err(line, col, "inconsistent dedent"));
                }
            }
            return Ok(true);
        }
    }

    fn number(&mut self, line: u32, col: u32) -> Result<(), UdfError> {
        let mut s = String::new();
        let mut is_float = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '_' {
                if c != '_' {
                    s.push(c);
                }
                self.bump();
            } else {
                break;
            }
        }
        if self.peek() == Some('.') && self.peek2().is_none_or(|c| !c.is_alphabetic() && c != '_') {
            is_float = true;
            s.push('.');
            self.bump();
            while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
                s.push(c);
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = (self.pos, self.line, self.col);
            let mut exp = String::from("e");
            self.bump();
            if let Some(sign @ ('+' | '-')) = self.peek() {
                exp.push(sign);
                self.bump();
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
                    exp.push(c);
                    self.bump();
                }
                is_float = true;
                s.push_str(&exp);
            } else {
                (self.pos, self.line, self.col) = save;
            }
        }
        let tok = if is_float {
            Tok::Float(s.parse().map_err(|_| self.err(line, col, "malformed float literal"))?)
        } else {
            Tok::Int(s.parse().map_err(|_| self.err(line, col, "integer literal out of range"))?)
        };
        self.push(tok, line, col);
        Ok(())
    }

    fn string(&mut self, line: u32, col: u32) -> Result<(), UdfError> {
        let quote = self.bump().unwrap();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.err(line, col, "unterminated string literal")),
                Some(c) if c == quote => break,
                Some('\\') => {
                    let esc = self.bump().ok_or_else(|| self.err(line, col, "unterminated string literal"))?;
                    s.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        '0' => '\0',
                        '\\' | '\'' | '"' => esc,
                        other => {
                            return Err(self.err(self.line, self.col - 1, format!("unknown escape `\\{other}`")))
                        }
                    });
                }
                Some(c) => s.push(c),
            }
        }
        self.push(Tok::Str(s), line, col);
        Ok(())
    }

    fn punct(&mut self, line: u32, col: u32) -> Result<(), UdfError> {
        let c = self.bump().unwrap();
        let next = self.peek();
        let two = |lx: &mut Self, tok: Tok| {
            lx.bump();
            tok
        };
        let tok = match (c, next) {
            ('*', Some('*')) => two(self, Tok::DoubleStar),
            ('*', Some('=')) => two(self, Tok::StarEq),
            ('*', _) => Tok::Star,
            ('/', Some('/')) => two(self, Tok::DoubleSlash),
            ('/', Some('=')) => two(self, Tok::SlashEq),
            ('/', _) => Tok::Slash,
            ('+', Some('=')) => two(self, Tok::PlusEq),
            ('+', _) => Tok::Plus,
            ('-', Some('=')) => two(self, Tok::MinusEq),
            ('-', Some('>')) => two(self, Tok::Arrow),
            ('-', _) => Tok::Minus,
            ('<', Some('=')) => two(self, Tok::Le),
            ('<', _) => Tok::Lt,
            ('>', Some('=')) => two(self, Tok::Ge),
            ('>', _) => Tok::Gt,
            ('=', Some('=')) => two(self, Tok::EqEq),
            ('=', _) => Tok::Assign,
            ('!', Some('=')) => two(self, Tok::Ne),
            ('%', _) => Tok::Percent,
            ('(', _) => {
                self.depth += 1;
                Tok::LParen
            }
            (')', _) => {
                self.depth = self.depth.saturating_sub(1);
                Tok::RParen
            }
            ('[', _) => {
                self.depth += 1;
                Tok::LBracket
            }
            (']', _) => {
                self.depth = self.depth.saturating_sub(1);
                Tok::RBracket
            }
            (',', _) => Tok::Comma,
            (':', _) => Tok::Colon,
            ('.', _) => Tok::Dot,
            (other, _) => return Err(self.err(line, col, format!("unexpected character `{other}`"))),
        };
        self.push(tok, line, col);
        Ok(())
    }
}
