use thiserror::Error;

use crate::graph::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("runtime error: {0}")]
    Runtime(#[from] RuntimeError),

    #[error("missing dependency: `{0}` not provided to sandbox")]
    MissingDependency(String),

    #[error("unknown timestamp {0}")]
    UnknownTimestamp(Timestamp),

    #[error("unknown blob key {0}")]
    UnknownKey(String),

    #[error("blob already written for key {0}; rewrites are forbidden")]
    RewriteForbidden(String),

    #[error("corrupt blob {key}: {reason}")]
    CorruptBlob { key: String, reason: String },

    #[error("corrupt journal at offset {offset}: {reason}")]
    CorruptJournal { offset: u64, reason: String },

    #[error("restore failed for {covar}@{t}: {reason}")]
    RestoreFailed { covar: String, t: Timestamp, reason: String },

    #[error("component is not a flat primitive list: {0}")]
    NotFlat(String),

    #[error("workload spec error: {0}")]
    Spec(String),

    #[error("session directory error: {0}")]
    Session(String),

    #[error("session is locked by another process ({0})")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 0 success, 2 user error, 3 restore failure,
    /// 4 corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RestoreFailed { .. } => 3,
            Error::CorruptBlob { .. } | Error::CorruptJournal { .. } => 4,
            _ => 2,
        }
    }
}

/// Errors raised while a cell is running. State changes made before the
/// failing statement persist, and the access log reflects everything up to
/// the failure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("index {index} out of range for list of length {len}")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("key `{0}` not found")]
    KeyNotFound(String),
    #[error("field `{0}` not found")]
    FieldNotFound(String),
    #[error("type mismatch: expected {expected}, got {got}")]
    TypeMismatch { expected: &'static str, got: &'static str },
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("execution budget exhausted")]
    BudgetExhausted,
}
