//! Recursive-descent parser for the cell language.
//!
//! Grammar (one statement per line; `#` starts a comment):
//!
//! ```text
//! program    := { statement }
//! statement  := target "=" expr
//!             | "del" IDENT
//!             | "append" "(" target "," expr ")"
//!             | "remove_key" "(" target "," expr ")"
//!             | "for" IDENT "in" expr ".." expr block
//!             | "if" expr block [ "else" block ]
//! block      := "{" { statement } "}"
//! target     := IDENT { "." IDENT | "[" expr "]" }
//! expr       := sum [ cmp-op sum ]
//! sum        := term { ("+" | "-") term }
//! term       := unary { ("*" | "/" | "%") unary }
//! unary      := "-" unary | postfix
//! postfix    := atom { "." IDENT | "[" expr "]" }
//! atom       := INT | FLOAT | STRING | "true" | "false" | "none" | IDENT
//!             | "list" "(" [ expr { "," expr } ] ")"
//!             | "map" "{" [ STRING ":" expr { "," ... } ] "}"
//!             | "record" "{" [ IDENT ":" expr { "," ... } ] "}"
//!             | "range_list" "(" expr ")" | "len" "(" expr ")"
//!             | "opaque" "(" STRING ")" | "opaque_nondet" "(" STRING ")"
//!             | "rand" "(" ")" | "(" expr ")"
//! ```
//!
//! Parsing is total on the grammar and never mutates state; errors carry
//! line and column.

use crate::error::{Error, Result};

use super::ast::{Accessor, BinOp, CellProgram, Expr, Stmt, Target};

const KEYWORDS: &[&str] = &[
    "del", "for", "in", "if", "else", "true", "false", "none", "list", "map", "record",
    "range_list", "opaque", "opaque_nondet", "rand", "len", "append", "remove_key",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Symbol(&'static str),
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Syntax { line: self.line, col: self.col, msg: msg.into() }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokenize(mut self) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        loop {
            // skip spaces, tabs, carriage returns, comments
            while let Some(c) = self.peek() {
                match c {
                    b' ' | b'\t' | b'\r' => {
                        self.bump();
                    }
                    b'#' => {
                        while let Some(c) = self.peek() {
                            if c == b'\n' {
                                break;
                            }
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else {
                out.push(Token { tok: Tok::Eof, line, col });
                return Ok(out);
            };
            let tok = match c {
                b'\n' => {
                    self.bump();
                    Tok::Newline
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_'))
                    {
                        self.bump();
                    }
                    Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
                }
                b'0'..=b'9' => self.lex_number()?,
                b'\'' | b'"' => self.lex_string()?,
                _ => self.lex_symbol()?,
            };
            out.push(Token { tok, line, col });
        }
    }

    fn lex_number(&mut self) -> Result<Tok> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.bump();
        }
        let mut is_float = false;
        // a lone '.' may start a float, but '..' is the range operator
        if self.peek() == Some(b'.') && self.src.get(self.pos + 1) != Some(&b'.') {
            is_float = true;
            self.bump();
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("expected digits after decimal point"));
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            is_float = true;
            self.bump();
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.bump();
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("expected digits in exponent"));
            }
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        if is_float {
            text.parse::<f64>().map(Tok::Float).map_err(|e| self.err(format!("bad float: {e}")))
        } else {
            text.parse::<i64>().map(Tok::Int).map_err(|e| self.err(format!("bad integer: {e}")))
        }
    }

    fn lex_string(&mut self) -> Result<Tok> {
        let quote = self.bump().expect("quote");
        let mut value = String::new();
        loop {
            match self.bump() {
                None | Some(b'\n') => return Err(self.err("unterminated string literal")),
                Some(b'\\') => match self.bump() {
                    Some(b'\\') => value.push('\\'),
                    Some(b'\'') => value.push('\''),
                    Some(b'"') => value.push('"'),
                    Some(b'n') => value.push('\n'),
                    Some(b't') => value.push('\t'),
                    other => {
                        return Err(self.err(format!(
                            "unknown escape \\{}",
                            other.map(|c| c as char).unwrap_or(' ')
                        )))
                    }
                },
                Some(c) if c == quote => return Ok(Tok::Str(value)),
                Some(c) if c < 0x80 => value.push(c as char),
                Some(first) => {
                    // re-assemble a multi-byte utf8 scalar
                    let mut buf = vec![first];
                    while let Some(next) = self.peek() {
                        if next & 0xC0 == 0x80 {
                            buf.push(next);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    match std::str::from_utf8(&buf) {
                        Ok(s) => value.push_str(s),
                        Err(_) => return Err(self.err("invalid utf8 in string literal")),
                    }
                }
            }
        }
    }

    fn lex_symbol(&mut self) -> Result<Tok> {
        let c = self.bump().expect("symbol");
        let two = |lexer: &mut Self, next: u8, long: &'static str, short: &'static str| {
            if lexer.peek() == Some(next) {
                lexer.bump();
                long
            } else {
                short
            }
        };
        let sym = match c {
            b'=' => two(self, b'=', "==", "="),
            b'!' => {
                if self.peek() == Some(b'=') {
                    self.bump();
                    "!="
                } else {
                    return Err(self.err("expected `!=`"));
                }
            }
            b'<' => two(self, b'=', "<=", "<"),
            b'>' => two(self, b'=', ">=", ">"),
            b'+' => "+",
            b'-' => "-",
            b'*' => "*",
            b'/' => "/",
            b'%' => "%",
            b'(' => "(",
            b')' => ")",
            b'[' => "[",
            b']' => "]",
            b'{' => "{",
            b'}' => "}",
            b',' => ",",
            b':' => ":",
            b'.' => two(self, b'.', "..", "."),
            other => return Err(self.err(format!("unexpected character `{}`", other as char))),
        };
        Ok(Tok::Symbol(sym))
    }
}

pub struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

/// Parses one cell's source into a program with `cell_id` 0; callers that
/// track submission order overwrite the id.
pub fn parse(source: &str) -> Result<CellProgram> {
    let tokens = Lexer::new(source).tokenize()?;
    let mut parser = Parser { tokens, pos: 0 };
    let statements = parser.parse_statements(true)?;
    Ok(CellProgram { source: source.to_string(), statements, cell_id: 0 })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self.here();
        Error::Syntax { line, col, msg: msg.into() }
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Symbol(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, sym: &str) -> Result<()> {
        if self.eat_symbol(sym) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{sym}`")))
        }
    }

    fn expect_ident(&mut self) -> Result<String> {
        match self.peek() {
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                let name = name.clone();
                self.bump();
                Ok(name)
            }
            Tok::Ident(name) => Err(self.err(format!("`{name}` is a reserved word"))),
            _ => Err(self.err("expected identifier")),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    /// Statement terminator: newline, EOF, or a closing brace (left for the
    /// block parser to consume).
    fn expect_terminator(&mut self) -> Result<()> {
        match self.peek() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof | Tok::Symbol("}") => Ok(()),
            _ => Err(self.err("expected end of statement")),
        }
    }

    fn parse_statements(&mut self, top_level: bool) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            match self.peek() {
                Tok::Eof => {
                    if top_level {
                        return Ok(out);
                    }
                    return Err(self.err("unexpected end of input; unclosed block"));
                }
                Tok::Symbol("}") if !top_level => return Ok(out),
                _ => out.push(self.parse_statement()?),
            }
        }
    }

    fn parse_block(&mut self) -> Result<Vec<Stmt>> {
        self.expect_symbol("{")?;
        let body = self.parse_statements(false)?;
        self.expect_symbol("}")?;
        Ok(body)
    }

    fn parse_statement(&mut self) -> Result<Stmt> {
        let stmt = match self.peek().clone() {
            Tok::Ident(word) => match word.as_str() {
                "del" => {
                    self.bump();
                    let name = self.expect_ident()?;
                    Stmt::Del { name }
                }
                "append" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let target = self.parse_target()?;
                    self.expect_symbol(",")?;
                    let value = self.parse_expr()?;
                    self.expect_symbol(")")?;
                    Stmt::Append { target, value }
                }
                "remove_key" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let target = self.parse_target()?;
                    self.expect_symbol(",")?;
                    let key = self.parse_expr()?;
                    self.expect_symbol(")")?;
                    Stmt::RemoveKey { target, key }
                }
                "for" => {
                    self.bump();
                    let var = self.expect_ident()?;
                    match self.peek() {
                        Tok::Ident(kw) if kw == "in" => {
                            self.bump();
                        }
                        _ => return Err(self.err("expected `in`")),
                    }
                    let start = self.parse_expr()?;
                    self.expect_symbol("..")?;
                    let end = self.parse_expr()?;
                    let body = self.parse_block()?;
                    return self.finish_block_stmt(Stmt::For { var, start, end, body });
                }
                "if" => {
                    self.bump();
                    let cond = self.parse_expr()?;
                    let then_body = self.parse_block()?;
                    let else_body = if matches!(self.peek(), Tok::Ident(kw) if kw == "else") {
                        self.bump();
                        self.parse_block()?
                    } else {
                        Vec::new()
                    };
                    return self.finish_block_stmt(Stmt::If { cond, then_body, else_body });
                }
                _ => {
                    let target = self.parse_target()?;
                    self.expect_symbol("=")?;
                    let value = self.parse_expr()?;
                    Stmt::Assign { target, value }
                }
            },
            _ => return Err(self.err("expected statement")),
        };
        self.expect_terminator()?;
        Ok(stmt)
    }

    fn finish_block_stmt(&mut self, stmt: Stmt) -> Result<Stmt> {
        self.expect_terminator()?;
        Ok(stmt)
    }

    fn parse_target(&mut self) -> Result<Target> {
        let base = self.expect_ident()?;
        let mut path = Vec::new();
        loop {
            if self.eat_symbol(".") {
                path.push(Accessor::Field(self.expect_ident()?));
            } else if self.eat_symbol("[") {
                let idx = self.parse_expr()?;
                self.expect_symbol("]")?;
                path.push(Accessor::Index(idx));
            } else {
                return Ok(Target { base, path });
            }
        }
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let lhs = self.parse_sum()?;
        let op = match self.peek() {
            Tok::Symbol("==") => Some(BinOp::Eq),
            Tok::Symbol("!=") => Some(BinOp::Ne),
            Tok::Symbol("<") => Some(BinOp::Lt),
            Tok::Symbol("<=") => Some(BinOp::Le),
            Tok::Symbol(">") => Some(BinOp::Gt),
            Tok::Symbol(">=") => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let rhs = self.parse_sum()?;
            Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn parse_sum(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Tok::Symbol("+") => BinOp::Add,
                Tok::Symbol("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Symbol("*") => BinOp::Mul,
                Tok::Symbol("/") => BinOp::Div,
                Tok::Symbol("%") => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if self.eat_symbol("-") {
            Ok(Expr::Neg(Box::new(self.parse_unary()?)))
        } else {
            self.parse_postfix()
        }
    }

    fn parse_postfix(&mut self) -> Result<Expr> {
        let mut expr = self.parse_atom()?;
        loop {
            if self.eat_symbol(".") {
                expr = Expr::Field(Box::new(expr), self.expect_ident()?);
            } else if self.eat_symbol("[") {
                let idx = self.parse_expr()?;
                self.expect_symbol("]")?;
                expr = Expr::Index(Box::new(expr), Box::new(idx));
            } else {
                return Ok(expr);
            }
        }
    }

    fn expect_str_lit(&mut self) -> Result<String> {
        match self.peek() {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("expected string literal")),
        }
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Symbol("(") => {
                self.bump();
                let inner = self.parse_expr()?;
                self.expect_symbol(")")?;
                Ok(inner)
            }
            Tok::Ident(word) => match word.as_str() {
                "true" => {
                    self.bump();
                    Ok(Expr::Bool(true))
                }
                "false" => {
                    self.bump();
                    Ok(Expr::Bool(false))
                }
                "none" => {
                    self.bump();
                    Ok(Expr::None)
                }
                "rand" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    self.expect_symbol(")")?;
                    Ok(Expr::Rand)
                }
                "len" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let inner = self.parse_expr()?;
                    self.expect_symbol(")")?;
                    Ok(Expr::Len(Box::new(inner)))
                }
                "range_list" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let n = self.parse_expr()?;
                    self.expect_symbol(")")?;
                    Ok(Expr::RangeList(Box::new(n)))
                }
                "opaque" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let tag = self.expect_str_lit()?;
                    self.expect_symbol(")")?;
                    Ok(Expr::Opaque { tag, deterministic: true })
                }
                "opaque_nondet" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let tag = self.expect_str_lit()?;
                    self.expect_symbol(")")?;
                    Ok(Expr::Opaque { tag, deterministic: false })
                }
                "list" => {
                    self.bump();
                    self.expect_symbol("(")?;
                    let mut items = Vec::new();
                    if !self.eat_symbol(")") {
                        loop {
                            items.push(self.parse_expr()?);
                            if self.eat_symbol(")") {
                                break;
                            }
                            self.expect_symbol(",")?;
                        }
                    }
                    Ok(Expr::ListLit(items))
                }
                "map" => {
                    self.bump();
                    self.expect_symbol("{")?;
                    let mut entries = Vec::new();
                    if !self.eat_symbol("}") {
                        loop {
                            let key = self.expect_str_lit()?;
                            self.expect_symbol(":")?;
                            entries.push((key, self.parse_expr()?));
                            if self.eat_symbol("}") {
                                break;
                            }
                            self.expect_symbol(",")?;
                        }
                    }
                    Ok(Expr::MapLit(entries))
                }
                "record" => {
                    self.bump();
                    self.expect_symbol("{")?;
                    let mut entries = Vec::new();
                    if !self.eat_symbol("}") {
                        loop {
                            let key = self.expect_ident()?;
                            self.expect_symbol(":")?;
                            entries.push((key, self.parse_expr()?));
                            if self.eat_symbol("}") {
                                break;
                            }
                            self.expect_symbol(",")?;
                        }
                    }
                    Ok(Expr::RecordLit(entries))
                }
                _ => {
                    let name = self.expect_ident()?;
                    Ok(Expr::Name(name))
                }
            },
            _ => Err(self.err("expected expression")),
        }
    }
}
