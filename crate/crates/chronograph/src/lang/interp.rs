//! Small-step execution of cell programs against the session state, with
//! per-cell access logging.
//!
//! Every statement that touches a root name contributes to the access log:
//! fetching a binding records a read, assigning or mutating through a name
//! records a write, `del` records a deletion. Names referenced only in
//! branches that never run are not logged (live semantics, not static
//! analysis). A runtime error stops the cell but keeps the state changes
//! and log entries made before the failing statement.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, RuntimeError};
use crate::heap::{Payload, State};

use super::ast::{Accessor, BinOp, CellProgram, Expr, Stmt, Target};

/// Upper bound on executed statements per cell; guards runaway loops in
/// fuzzed programs.
const STEP_BUDGET: u64 = 4_000_000;

/// Per-cell record of which root names were touched and how.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessLog {
    /// Names whose binding was fetched.
    pub read_names: BTreeSet<String>,
    /// Names assigned, or whose reachable objects were mutated via them.
    pub written_names: BTreeSet<String>,
    /// Names removed with `del`.
    pub deleted_names: BTreeSet<String>,
    /// True iff `rand()` or a nondeterministic `opaque` expression ran.
    pub nondeterministic: bool,
}

impl AccessLog {
    /// All names accessed in any way (get, set, or deletion).
    pub fn accessed(&self) -> BTreeSet<String> {
        let mut out = self.read_names.clone();
        out.extend(self.written_names.iter().cloned());
        out.extend(self.deleted_names.iter().cloned());
        out
    }
}

/// Result of running one cell: the log always reflects what actually
/// executed, whether or not the cell finished.
#[derive(Debug, Clone)]
pub struct ExecOutcome {
    pub log: AccessLog,
    pub error: Option<RuntimeError>,
}

impl ExecOutcome {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Deterministic per-session stream backing `rand()`.
#[derive(Debug, Clone)]
pub struct SessionRng {
    rng: ChaCha8Rng,
}

impl SessionRng {
    pub fn seeded(seed: u64) -> Self {
        SessionRng { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn next_float(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// Executes a parsed cell against the live state. State changes made before
/// a failing statement persist.
pub fn execute(program: &CellProgram, state: &mut State, rng: &mut SessionRng) -> ExecOutcome {
    let mut interp = Interp { state, rng, log: AccessLog::default(), steps: 0 };
    let error = match interp.run_block(&program.statements) {
        Ok(()) => None,
        Err(e) => Some(e),
    };
    ExecOutcome { log: interp.log, error }
}

/// Replays a cell in a scratch state seeded only with `inputs`, leaving the
/// live session untouched. `required` is the recorded set of names the cell
/// is known to access; each must be bound by some input component up front,
/// otherwise the replay fails with `MissingDependency`.
///
/// A runtime error during replay is not a failure: it reproduces the
/// original partial execution, and the partial state is returned. Replaying
/// a nondeterministic cell is permitted; the caller decides acceptability.
pub fn replay_in_sandbox(
    program: &CellProgram,
    required: &BTreeSet<String>,
    inputs: &[State],
    sandbox_seed: u64,
) -> Result<SandboxOutcome> {
    let mut sandbox = State::new();
    for component in inputs {
        sandbox.instantiate_component(component);
    }
    for name in required {
        if !sandbox.ns.is_bound(name) {
            return Err(Error::MissingDependency(name.clone()));
        }
    }
    let mut rng = SessionRng::seeded(sandbox_seed);
    let outcome = execute(program, &mut sandbox, &mut rng);
    Ok(SandboxOutcome { state: sandbox, outcome })
}

/// Post-replay sandbox: the resulting scratch state plus the replay's log.
#[derive(Debug)]
pub struct SandboxOutcome {
    pub state: State,
    pub outcome: ExecOutcome,
}

impl SandboxOutcome {
    /// Extracts the component for one set of member names, if all are bound.
    pub fn component(&self, members: &[String]) -> Result<State> {
        self.state.extract_component(members)
    }
}

struct Interp<'a> {
    state: &'a mut State,
    rng: &'a mut SessionRng,
    log: AccessLog,
    steps: u64,
}

type ExecResult<T> = Result<T, RuntimeError>;

impl Interp<'_> {
    fn tick(&mut self) -> ExecResult<()> {
        self.steps += 1;
        if self.steps > STEP_BUDGET {
            return Err(RuntimeError::BudgetExhausted);
        }
        Ok(())
    }

    fn run_block(&mut self, stmts: &[Stmt]) -> ExecResult<()> {
        for stmt in stmts {
            self.run_stmt(stmt)?;
        }
        Ok(())
    }

    fn run_stmt(&mut self, stmt: &Stmt) -> ExecResult<()> {
        self.tick()?;
        match stmt {
            Stmt::Assign { target, value } => {
                let value = self.eval(value)?;
                self.assign(target, value)
            }
            Stmt::Del { name } => {
                self.log.deleted_names.insert(name.clone());
                self.state
                    .ns
                    .delete_binding(name)
                    .map_err(|_| RuntimeError::Unbound(name.clone()))?;
                Ok(())
            }
            Stmt::Append { target, value } => {
                let value = self.eval(value)?;
                let obj = self.resolve_target_object(target, true)?;
                match &mut self.state.heap.get_mut(obj).payload {
                    Payload::List(items) => {
                        items.push(value);
                        Ok(())
                    }
                    other => Err(RuntimeError::TypeMismatch {
                        expected: "list",
                        got: other.kind().name(),
                    }),
                }
            }
            Stmt::RemoveKey { target, key } => {
                let key_id = self.eval(key)?;
                let key = match &self.state.heap.get(key_id).payload {
                    Payload::Str(s) => s.clone(),
                    other => {
                        return Err(RuntimeError::TypeMismatch {
                            expected: "str",
                            got: other.kind().name(),
                        })
                    }
                };
                let obj = self.resolve_target_object(target, true)?;
                match &mut self.state.heap.get_mut(obj).payload {
                    Payload::Map(entries) => entries
                        .remove(&key)
                        .map(|_| ())
                        .ok_or(RuntimeError::KeyNotFound(key)),
                    other => Err(RuntimeError::TypeMismatch {
                        expected: "map",
                        got: other.kind().name(),
                    }),
                }
            }
            Stmt::For { var, start, end, body } => {
                let start = self.eval_int(start)?;
                let end = self.eval_int(end)?;
                let mut i = start;
                while i < end {
                    self.tick()?;
                    let iv = self.state.heap.alloc(Payload::Int(i));
                    self.log.written_names.insert(var.clone());
                    self.state.ns.bind(var, iv);
                    self.run_block(body)?;
                    i += 1;
                }
                Ok(())
            }
            Stmt::If { cond, then_body, else_body } => {
                if self.eval_bool(cond)? {
                    self.run_block(then_body)
                } else {
                    self.run_block(else_body)
                }
            }
        }
    }

    /// Assign into a target. A bare name rebinds it; a path navigates from
    /// the (read) root binding and mutates the final container in place.
    fn assign(&mut self, target: &Target, value: crate::heap::ObjectId) -> ExecResult<()> {
        if target.path.is_empty() {
            self.log.written_names.insert(target.base.clone());
            self.state.ns.bind(&target.base, value);
            return Ok(());
        }
        let mut obj = self.read_root(&target.base)?;
        self.log.written_names.insert(target.base.clone());
        for acc in &target.path[..target.path.len() - 1] {
            obj = self.access(obj, acc)?;
        }
        match target.path.last().expect("nonempty path") {
            Accessor::Field(field) => match &mut self.state.heap.get_mut(obj).payload {
                Payload::Record(entries) => {
                    entries.insert(field.clone(), value);
                    Ok(())
                }
                other => Err(RuntimeError::TypeMismatch {
                    expected: "record",
                    got: other.kind().name(),
                }),
            },
            Accessor::Index(idx_expr) => {
                let idx = self.eval(idx_expr)?;
                match &self.state.heap.get(idx).payload {
                    Payload::Int(i) => {
                        let i = *i;
                        match &mut self.state.heap.get_mut(obj).payload {
                            Payload::List(items) => {
                                if i < 0 || i as usize >= items.len() {
                                    Err(RuntimeError::IndexOutOfRange { index: i, len: items.len() })
                                } else {
                                    items[i as usize] = value;
                                    Ok(())
                                }
                            }
                            other => Err(RuntimeError::TypeMismatch {
                                expected: "list",
                                got: other.kind().name(),
                            }),
                        }
                    }
                    Payload::Str(key) => {
                        let key = key.clone();
                        match &mut self.state.heap.get_mut(obj).payload {
                            Payload::Map(entries) => {
                                entries.insert(key, value);
                                Ok(())
                            }
                            other => Err(RuntimeError::TypeMismatch {
                                expected: "map",
                                got: other.kind().name(),
                            }),
                        }
                    }
                    other => Err(RuntimeError::TypeMismatch {
                        expected: "int or str index",
                        got: other.kind().name(),
                    }),
                }
            }
        }
    }

    /// Navigates a full target path to the object it denotes, logging the
    /// root access. Mutating statements log the root as written too.
    fn resolve_target_object(
        &mut self,
        target: &Target,
        written: bool,
    ) -> ExecResult<crate::heap::ObjectId> {
        let mut obj = self.read_root(&target.base)?;
        if written {
            self.log.written_names.insert(target.base.clone());
        }
        for acc in &target.path {
            obj = self.access(obj, acc)?;
        }
        Ok(obj)
    }

    fn read_root(&mut self, name: &str) -> ExecResult<crate::heap::ObjectId> {
        self.log.read_names.insert(name.to_string());
        self.state
            .ns
            .get(name)
            .ok_or_else(|| RuntimeError::Unbound(name.to_string()))
    }

    fn access(&mut self, obj: crate::heap::ObjectId, acc: &Accessor) -> ExecResult<crate::heap::ObjectId> {
        match acc {
            Accessor::Field(field) => self.read_field(obj, field),
            Accessor::Index(idx_expr) => {
                let idx = self.eval(idx_expr)?;
                self.read_index(obj, idx)
            }
        }
    }

    fn read_field(
        &mut self,
        obj: crate::heap::ObjectId,
        field: &str,
    ) -> ExecResult<crate::heap::ObjectId> {
        match &self.state.heap.get(obj).payload {
            Payload::Record(entries) => entries
                .get(field)
                .copied()
                .ok_or_else(|| RuntimeError::FieldNotFound(field.to_string())),
            other => Err(RuntimeError::TypeMismatch {
                expected: "record",
                got: other.kind().name(),
            }),
        }
    }

    fn read_index(
        &mut self,
        obj: crate::heap::ObjectId,
        idx: crate::heap::ObjectId,
    ) -> ExecResult<crate::heap::ObjectId> {
        match (&self.state.heap.get(obj).payload, &self.state.heap.get(idx).payload) {
            (Payload::List(items), Payload::Int(i)) => {
                if *i < 0 || *i as usize >= items.len() {
                    Err(RuntimeError::IndexOutOfRange { index: *i, len: items.len() })
                } else {
                    Ok(items[*i as usize])
                }
            }
            (Payload::Map(entries), Payload::Str(key)) => entries
                .get(key)
                .copied()
                .ok_or_else(|| RuntimeError::KeyNotFound(key.clone())),
            (Payload::List(_) | Payload::Map(_), other) => Err(RuntimeError::TypeMismatch {
                expected: "int or str index",
                got: other.kind().name(),
            }),
            (other, _) => Err(RuntimeError::TypeMismatch {
                expected: "list or map",
                got: other.kind().name(),
            }),
        }
    }

    fn eval_int(&mut self, expr: &Expr) -> ExecResult<i64> {
        let id = self.eval(expr)?;
        match &self.state.heap.get(id).payload {
            Payload::Int(v) => Ok(*v),
            other => Err(RuntimeError::TypeMismatch { expected: "int", got: other.kind().name() }),
        }
    }

    fn eval_bool(&mut self, expr: &Expr) -> ExecResult<bool> {
        let id = self.eval(expr)?;
        match &self.state.heap.get(id).payload {
            Payload::Bool(v) => Ok(*v),
            other => Err(RuntimeError::TypeMismatch { expected: "bool", got: other.kind().name() }),
        }
    }

    /// Evaluates an expression to an object id. Literals and operators
    /// allocate fresh objects; name and accessor reads return existing ids,
    /// which is how aliases arise.
    fn eval(&mut self, expr: &Expr) -> ExecResult<crate::heap::ObjectId> {
        self.tick()?;
        match expr {
            Expr::Int(v) => Ok(self.state.heap.alloc(Payload::Int(*v))),
            Expr::Float(v) => Ok(self.state.heap.alloc(Payload::Float(*v))),
            Expr::Bool(v) => Ok(self.state.heap.alloc(Payload::Bool(*v))),
            Expr::Str(s) => Ok(self.state.heap.alloc(Payload::Str(s.clone()))),
            Expr::None => Ok(self.state.heap.alloc(Payload::None)),
            Expr::Name(name) => self.read_root(name),
            Expr::Field(base, field) => {
                let obj = self.eval(base)?;
                self.read_field(obj, field)
            }
            Expr::Index(base, idx) => {
                let obj = self.eval(base)?;
                let idx = self.eval(idx)?;
                self.read_index(obj, idx)
            }
            Expr::Neg(inner) => {
                let id = self.eval(inner)?;
                match &self.state.heap.get(id).payload {
                    Payload::Int(v) => {
                        let v = v.checked_neg().ok_or(RuntimeError::Overflow)?;
                        Ok(self.state.heap.alloc(Payload::Int(v)))
                    }
                    Payload::Float(v) => {
                        let v = -*v;
                        Ok(self.state.heap.alloc(Payload::Float(v)))
                    }
                    other => Err(RuntimeError::TypeMismatch {
                        expected: "int or float",
                        got: other.kind().name(),
                    }),
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                self.binary(*op, l, r)
            }
            Expr::ListLit(items) => {
                let ids = items.iter().map(|e| self.eval(e)).collect::<ExecResult<Vec<_>>>()?;
                Ok(self.state.heap.alloc(Payload::List(ids)))
            }
            Expr::MapLit(entries) => {
                let mut map = BTreeMap::new();
                for (k, v) in entries {
                    let id = self.eval(v)?;
                    map.insert(k.clone(), id);
                }
                Ok(self.state.heap.alloc(Payload::Map(map)))
            }
            Expr::RecordLit(entries) => {
                let mut rec = BTreeMap::new();
                for (k, v) in entries {
                    let id = self.eval(v)?;
                    rec.insert(k.clone(), id);
                }
                Ok(self.state.heap.alloc(Payload::Record(rec)))
            }
            Expr::RangeList(n) => {
                let n = self.eval_int(n)?;
                if n < 0 {
                    return Err(RuntimeError::TypeMismatch { expected: "non-negative int", got: "int" });
                }
                let ids = (0..n).map(|i| self.state.heap.alloc(Payload::Int(i))).collect();
                Ok(self.state.heap.alloc(Payload::List(ids)))
            }
            Expr::Opaque { tag, deterministic } => {
                if !deterministic {
                    self.log.nondeterministic = true;
                }
                Ok(self
                    .state
                    .heap
                    .alloc(Payload::Opaque { tag: tag.clone(), deterministic: *deterministic }))
            }
            Expr::Rand => {
                self.log.nondeterministic = true;
                let v = self.rng.next_float();
                Ok(self.state.heap.alloc(Payload::Float(v)))
            }
            Expr::Len(inner) => {
                let id = self.eval(inner)?;
                let len = match &self.state.heap.get(id).payload {
                    Payload::List(items) => items.len(),
                    Payload::Map(entries) | Payload::Record(entries) => entries.len(),
                    Payload::Str(s) => s.chars().count(),
                    other => {
                        return Err(RuntimeError::TypeMismatch {
                            expected: "list, map, record, or str",
                            got: other.kind().name(),
                        })
                    }
                };
                Ok(self.state.heap.alloc(Payload::Int(len as i64)))
            }
        }
    }

    fn binary(
        &mut self,
        op: BinOp,
        l: crate::heap::ObjectId,
        r: crate::heap::ObjectId,
    ) -> ExecResult<crate::heap::ObjectId> {
        use Payload::*;
        let lp = self.state.heap.get(l).payload.clone();
        let rp = self.state.heap.get(r).payload.clone();
        let payload = match op {
            BinOp::Add => match (&lp, &rp) {
                (Int(a), Int(b)) => Int(a.checked_add(*b).ok_or(RuntimeError::Overflow)?),
                (Str(a), Str(b)) => Str(format!("{a}{b}")),
                _ => {
                    let (a, b) = self.float_pair(&lp, &rp)?;
                    Float(a + b)
                }
            },
            BinOp::Sub => match (&lp, &rp) {
                (Int(a), Int(b)) => Int(a.checked_sub(*b).ok_or(RuntimeError::Overflow)?),
                _ => {
                    let (a, b) = self.float_pair(&lp, &rp)?;
                    Float(a - b)
                }
            },
            BinOp::Mul => match (&lp, &rp) {
                (Int(a), Int(b)) => Int(a.checked_mul(*b).ok_or(RuntimeError::Overflow)?),
                _ => {
                    let (a, b) = self.float_pair(&lp, &rp)?;
                    Float(a * b)
                }
            },
            BinOp::Div => match (&lp, &rp) {
                (Int(a), Int(b)) => {
                    if *b == 0 {
                        return Err(RuntimeError::DivisionByZero);
                    }
                    Int(a.checked_div(*b).ok_or(RuntimeError::Overflow)?)
                }
                _ => {
                    let (a, b) = self.float_pair(&lp, &rp)?;
                    if b == 0.0 {
                        return Err(RuntimeError::DivisionByZero);
                    }
                    Float(a / b)
                }
            },
            BinOp::Rem => match (&lp, &rp) {
                (Int(a), Int(b)) => {
                    if *b == 0 {
                        return Err(RuntimeError::DivisionByZero);
                    }
                    Int(a.checked_rem(*b).ok_or(RuntimeError::Overflow)?)
                }
                _ => {
                    let (a, b) = self.float_pair(&lp, &rp)?;
                    if b == 0.0 {
                        return Err(RuntimeError::DivisionByZero);
                    }
                    Float(a % b)
                }
            },
            BinOp::Eq => Bool(prim_eq(&lp, &rp)?),
            BinOp::Ne => Bool(!prim_eq(&lp, &rp)?),
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let ord = prim_cmp(&lp, &rp)?;
                Bool(match op {
                    BinOp::Lt => ord.is_lt(),
                    BinOp::Le => ord.is_le(),
                    BinOp::Gt => ord.is_gt(),
                    _ => ord.is_ge(),
                })
            }
        };
        Ok(self.state.heap.alloc(payload))
    }

    fn float_pair(&self, l: &Payload, r: &Payload) -> ExecResult<(f64, f64)> {
        let coerce = |p: &Payload| match p {
            Payload::Int(v) => Ok(*v as f64),
            Payload::Float(v) => Ok(*v),
            other => Err(RuntimeError::TypeMismatch {
                expected: "int or float",
                got: other.kind().name(),
            }),
        };
        Ok((coerce(l)?, coerce(r)?))
    }
}

/// Value equality on primitives. Numerics compare across int/float; other
/// kind mismatches compare unequal rather than failing. Containers cannot
/// be compared by value.
fn prim_eq(l: &Payload, r: &Payload) -> ExecResult<bool> {
    use Payload::*;
    if l.is_container() || r.is_container() || matches!(l, Opaque { .. }) || matches!(r, Opaque { .. })
    {
        return Err(RuntimeError::TypeMismatch {
            expected: "primitive operands",
            got: if l.is_container() || matches!(l, Opaque { .. }) {
                l.kind().name()
            } else {
                r.kind().name()
            },
        });
    }
    Ok(match (l, r) {
        (Int(a), Int(b)) => a == b,
        (Float(a), Float(b)) => a == b,
        (Int(a), Float(b)) | (Float(b), Int(a)) => (*a as f64) == *b,
        (Bool(a), Bool(b)) => a == b,
        (Str(a), Str(b)) => a == b,
        (None, None) => true,
        _ => false,
    })
}

fn prim_cmp(l: &Payload, r: &Payload) -> ExecResult<std::cmp::Ordering> {
    use Payload::*;
    match (l, r) {
        (Int(a), Int(b)) => Ok(a.cmp(b)),
        (Float(a), Float(b)) => a.partial_cmp(b).ok_or(RuntimeError::TypeMismatch {
            expected: "comparable floats",
            got: "float",
        }),
        (Int(a), Float(b)) => (*a as f64).partial_cmp(b).ok_or(RuntimeError::TypeMismatch {
            expected: "comparable floats",
            got: "float",
        }),
        (Float(a), Int(b)) => a.partial_cmp(&(*b as f64)).ok_or(RuntimeError::TypeMismatch {
            expected: "comparable floats",
            got: "float",
        }),
        (Str(a), Str(b)) => Ok(a.cmp(b)),
        (other, _) => Err(RuntimeError::TypeMismatch {
            expected: "ordered operands",
            got: other.kind().name(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parser::parse;

    fn run(src: &str, state: &mut State) -> ExecOutcome {
        let program = parse(src).unwrap();
        let mut rng = SessionRng::seeded(7);
        execute(&program, state, &mut rng)
    }

    #[test]
    fn read_write_logged() {
        let mut st = State::new();
        run("x = 1", &mut st);
        let out = run("y = x", &mut st);
        assert!(out.ok());
        assert_eq!(out.log.read_names, BTreeSet::from(["x".to_string()]));
        assert_eq!(out.log.written_names, BTreeSet::from(["y".to_string()]));
        // y aliases x's object
        assert_eq!(st.ns.lookup("x").unwrap(), st.ns.lookup("y").unwrap());
    }

    #[test]
    fn index_set_logs_read_and_write() {
        let mut st = State::new();
        run("ser = list('a', 'b', 'c')", &mut st);
        let out = run("ser[1] = 'q'", &mut st);
        assert!(out.ok());
        assert!(out.log.read_names.contains("ser"));
        assert!(out.log.written_names.contains("ser"));
    }

    #[test]
    fn untaken_branch_not_logged() {
        let mut st = State::new();
        run("w = 1", &mut st);
        let out = run("if false {\n    z = w\n}", &mut st);
        assert!(out.ok());
        assert!(!out.log.read_names.contains("w"));
        assert!(!out.log.written_names.contains("z"));
    }

    #[test]
    fn error_mid_cell_keeps_partial_state_and_log() {
        let mut st = State::new();
        let out = run("a = 1\nb = missing\nc = 2", &mut st);
        assert_eq!(out.error, Some(RuntimeError::Unbound("missing".into())));
        assert!(st.ns.is_bound("a"));
        assert!(!st.ns.is_bound("c"));
        assert!(out.log.written_names.contains("a"));
        assert!(out.log.read_names.contains("missing"));
        assert!(!out.log.written_names.contains("c"));
    }

    #[test]
    fn rand_sets_nondeterministic() {
        let mut st = State::new();
        let out = run("r = rand()", &mut st);
        assert!(out.log.nondeterministic);
        let out = run("g = opaque('h')", &mut st);
        assert!(!out.log.nondeterministic);
        let out = run("g = opaque_nondet('h')", &mut st);
        assert!(out.log.nondeterministic);
    }

    #[test]
    fn determinism_twice_from_equal_states() {
        let src = "xs = range_list(5)\nfor i in 0..4 {\n    xs[i] = xs[i] + i * 2\n}\nm = map{'a': xs[0], 'b': record{inner: xs}}\nif xs[3] > 2 {\n    del m\n}";
        let mut a = State::new();
        let mut b = State::new();
        let out_a = run(src, &mut a);
        let out_b = run(src, &mut b);
        assert!(out_a.ok() && out_b.ok());
        assert!(!out_a.log.nondeterministic);
        assert!(crate::heap::deep_equal(&a, &b));
    }

    #[test]
    fn sandbox_replay_is_isolated() {
        let mut st = State::new();
        run("gmm = record{k: 3, mean: 2.5}", &mut st);
        let component = st.extract_component(&["gmm".into()]).unwrap();
        let program = parse("plot = record{curve: gmm.mean + 0.0, label: 'fit'}").unwrap();
        let before = st.clone();
        let required = BTreeSet::from(["gmm".to_string()]);
        let sandbox = replay_in_sandbox(&program, &required, &[component], 0).unwrap();
        assert!(sandbox.outcome.ok());
        assert!(sandbox.state.ns.is_bound("plot"));
        assert!(crate::heap::deep_equal(&before, &st));
    }

    #[test]
    fn sandbox_missing_dependency() {
        let program = parse("y = x").unwrap();
        let required = BTreeSet::from(["x".to_string()]);
        let err = replay_in_sandbox(&program, &required, &[], 0).unwrap_err();
        assert!(matches!(err, Error::MissingDependency(_)));
    }

    #[test]
    fn replay_identity_cell() {
        let mut st = State::new();
        run("x = list(1, 2)", &mut st);
        let component = st.extract_component(&["x".into()]).unwrap();
        let program = parse("x = x").unwrap();
        let required = BTreeSet::from(["x".to_string()]);
        let sandbox = replay_in_sandbox(&program, &required, &[component.clone()], 0).unwrap();
        let result = sandbox.component(&["x".into()]).unwrap();
        assert!(crate::heap::deep_equal(&component, &result));
    }
}
