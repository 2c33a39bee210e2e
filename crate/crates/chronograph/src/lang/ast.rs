//! Cell programs: parsed statement lists plus the canonical pretty-printer.
//!
//! The printer emits a normal form the parser accepts back; parsing the
//! printed form yields an identical AST.

use std::fmt;

/// One cell: the raw source and its parsed statements. `cell_id` is the
/// ordinal within submission order (0 for standalone parses).
#[derive(Debug, Clone, PartialEq)]
pub struct CellProgram {
    pub source: String,
    pub statements: Vec<Stmt>,
    pub cell_id: u64,
}

impl fmt::Display for CellProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for stmt in &self.statements {
            write_stmt(f, stmt, 0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign { target: Target, value: Expr },
    Del { name: String },
    Append { target: Target, value: Expr },
    RemoveKey { target: Target, key: Expr },
    For { var: String, start: Expr, end: Expr, body: Vec<Stmt> },
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
}

/// An assignment or mutation site: a root name followed by field/index
/// accessors. An empty path rebinds the name itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub base: String,
    pub path: Vec<Accessor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Accessor {
    Field(String),
    Index(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    None,
    Name(String),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    ListLit(Vec<Expr>),
    MapLit(Vec<(String, Expr)>),
    RecordLit(Vec<(String, Expr)>),
    RangeList(Box<Expr>),
    Opaque { tag: String, deterministic: bool },
    Rand,
    Len(Box<Expr>),
}

fn indent(f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
    for _ in 0..depth {
        f.write_str("    ")?;
    }
    Ok(())
}

fn write_stmt(f: &mut fmt::Formatter<'_>, stmt: &Stmt, depth: usize) -> fmt::Result {
    indent(f, depth)?;
    match stmt {
        Stmt::Assign { target, value } => writeln!(f, "{target} = {value}"),
        Stmt::Del { name } => writeln!(f, "del {name}"),
        Stmt::Append { target, value } => writeln!(f, "append({target}, {value})"),
        Stmt::RemoveKey { target, key } => writeln!(f, "remove_key({target}, {key})"),
        Stmt::For { var, start, end, body } => {
            writeln!(f, "for {var} in {start}..{end} {{")?;
            for s in body {
                write_stmt(f, s, depth + 1)?;
            }
            indent(f, depth)?;
            writeln!(f, "}}")
        }
        Stmt::If { cond, then_body, else_body } => {
            writeln!(f, "if {cond} {{")?;
            for s in then_body {
                write_stmt(f, s, depth + 1)?;
            }
            indent(f, depth)?;
            if else_body.is_empty() {
                writeln!(f, "}}")
            } else {
                writeln!(f, "}} else {{")?;
                for s in else_body {
                    write_stmt(f, s, depth + 1)?;
                }
                indent(f, depth)?;
                writeln!(f, "}}")
            }
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base)?;
        for acc in &self.path {
            match acc {
                Accessor::Field(name) => write!(f, ".{name}")?,
                Accessor::Index(expr) => write!(f, "[{expr}]")?,
            }
        }
        Ok(())
    }
}

fn escape_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}

/// Operator precedence for minimal parenthesization: comparisons bind
/// loosest, then additive, then multiplicative, then unary/postfix.
fn precedence(expr: &Expr) -> u8 {
    match expr {
        Expr::Binary(op, _, _) if op.is_comparison() => 1,
        Expr::Binary(BinOp::Add | BinOp::Sub, _, _) => 2,
        Expr::Binary(_, _, _) => 3,
        Expr::Neg(_) => 4,
        _ => 5,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, expr: &Expr, min_prec: u8) -> fmt::Result {
    let prec = precedence(expr);
    let needs_parens = prec < min_prec;
    if needs_parens {
        f.write_str("(")?;
    }
    match expr {
        Expr::Int(v) => write!(f, "{v}")?,
        Expr::Float(v) => {
            // {:?} keeps a trailing .0, so floats stay floats on reparse
            write!(f, "{v:?}")?
        }
        Expr::Bool(v) => write!(f, "{v}")?,
        Expr::Str(s) => write!(f, "'{}'", escape_str(s))?,
        Expr::None => f.write_str("none")?,
        Expr::Name(n) => f.write_str(n)?,
        Expr::Field(base, name) => {
            write_expr(f, base, 5)?;
            write!(f, ".{name}")?;
        }
        Expr::Index(base, idx) => {
            write_expr(f, base, 5)?;
            f.write_str("[")?;
            write_expr(f, idx, 0)?;
            f.write_str("]")?;
        }
        Expr::Neg(inner) => {
            f.write_str("-")?;
            write_expr(f, inner, 4)?;
        }
        Expr::Binary(op, lhs, rhs) => {
            write_expr(f, lhs, prec)?;
            write!(f, " {} ", op.symbol())?;
            // left-associative: right operand needs strictly higher precedence
            write_expr(f, rhs, prec + 1)?;
        }
        Expr::ListLit(items) => {
            f.write_str("list(")?;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_expr(f, item, 0)?;
            }
            f.write_str(")")?;
        }
        Expr::MapLit(entries) => {
            f.write_str("map{")?;
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "'{}': ", escape_str(k))?;
                write_expr(f, v, 0)?;
            }
            f.write_str("}")?;
        }
        Expr::RecordLit(entries) => {
            f.write_str("record{")?;
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{k}: ")?;
                write_expr(f, v, 0)?;
            }
            f.write_str("}")?;
        }
        Expr::RangeList(n) => {
            f.write_str("range_list(")?;
            write_expr(f, n, 0)?;
            f.write_str(")")?;
        }
        Expr::Opaque { tag, deterministic } => {
            if *deterministic {
                write!(f, "opaque('{}')", escape_str(tag))?;
            } else {
                write!(f, "opaque_nondet('{}')", escape_str(tag))?;
            }
        }
        Expr::Rand => f.write_str("rand()")?,
        Expr::Len(inner) => {
            f.write_str("len(")?;
            write_expr(f, inner, 0)?;
            f.write_str(")")?;
        }
    }
    if needs_parens {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}
