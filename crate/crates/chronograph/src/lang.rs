//! The cell language: a minimal deterministic scripting language whose
//! cells mutate the session state and produce per-cell access logs.

pub mod ast;
pub mod interp;
pub mod parser;

pub use ast::{Accessor, BinOp, CellProgram, Expr, Stmt, Target};
pub use interp::{execute, replay_in_sandbox, AccessLog, ExecOutcome, SandboxOutcome, SessionRng};
pub use parser::parse;
