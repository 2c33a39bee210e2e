//! Randomized oracle-equivalence harness.
//!
//! Generates random session traces (cells, checkouts, blob poisoning) and
//! checks every engine-level guarantee against independent brute-force
//! oracles:
//!
//! - detection has no false negatives: every co-variable whose component
//!   changed per a pre/post deep comparison is covered by the reported
//!   delta;
//! - pruning is sound: co-variables outside the accessed candidate set
//!   never change;
//! - the incremental partition equals brute-force connected components;
//! - detection work stays within the candidate bound;
//! - for deterministic traces, every checkout lands on a state deeply
//!   equal to a from-scratch replay of the target's root path, co-variables
//!   classified identical by `diff` really are equal between the replayed
//!   states, and repeated checkout is a no-op;
//! - a failed checkout leaves the live state untouched.
//!
//! The first violation stops the trace; the driver then greedily minimizes
//! the action list to a small reproduction script.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::config::SessionConfig;
use crate::detect::{partition, CoVarId, CoVariable};
use crate::error::Error;
use crate::graph::{CheckpointGraph, Timestamp};
use crate::heap::{deep_equal, State};
use crate::lang::{execute, parse, SessionRng};
use crate::session::Session;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceAction {
    Run(String),
    Checkout(Timestamp),
    /// Corrupt the stored bytes of the `nth` (mod delta length) entry of
    /// node `t`; resolved against the real delta at run time.
    Poison { t: Timestamp, nth: usize },
}

impl fmt::Display for TraceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceAction::Run(src) => {
                writeln!(f, "# --- cell ---")?;
                write!(f, "{src}")
            }
            TraceAction::Checkout(t) => write!(f, "# checkout {t}"),
            TraceAction::Poison { t, nth } => write!(f, "# poison delta entry {nth} of {t}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub seed: u64,
    pub traces: usize,
    pub max_cells: usize,
    pub max_names: usize,
    pub allow_nondet: bool,
    pub allow_opaque: bool,
    pub poison_rate: f64,
    pub checkout_rate: f64,
    /// Rate of cells that reference unbound names on purpose.
    pub error_rate: f64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 1,
            traces: 100,
            max_cells: 30,
            max_names: 40,
            allow_nondet: false,
            allow_opaque: true,
            poison_rate: 0.10,
            checkout_rate: 0.15,
            error_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FuzzStats {
    pub traces: u64,
    pub cells: u64,
    pub checkouts: u64,
    pub restore_failures: u64,
    pub replayed_cells: u64,
    /// Co-variables reported updated.
    pub reported_updates: u64,
    /// Reported updates that the deep-compare oracle confirms changed.
    pub true_updates: u64,
    /// Co-variables classified diverged by diff.
    pub diverged: u64,
    /// Diverged co-variables that were actually equal (allowed
    /// conservatism).
    pub false_diverged: u64,
}

impl FuzzStats {
    pub fn false_positive_rate(&self) -> f64 {
        if self.reported_updates == 0 {
            0.0
        } else {
            1.0 - self.true_updates as f64 / self.reported_updates as f64
        }
    }

    pub fn false_diverged_rate(&self) -> f64 {
        if self.diverged == 0 {
            0.0
        } else {
            self.false_diverged as f64 / self.diverged as f64
        }
    }

    fn merge(&mut self, other: &FuzzStats) {
        self.traces += other.traces;
        self.cells += other.cells;
        self.checkouts += other.checkouts;
        self.restore_failures += other.restore_failures;
        self.replayed_cells += other.replayed_cells;
        self.reported_updates += other.reported_updates;
        self.true_updates += other.true_updates;
        self.diverged += other.diverged;
        self.false_diverged += other.false_diverged;
    }
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub trace_seed: u64,
    pub description: String,
    pub actions: Vec<TraceAction>,
}

impl Violation {
    /// Renders the action list as a commented script, replayable by hand.
    pub fn repro_script(&self) -> String {
        let mut out = format!("# violation: {}\n# trace seed: {}\n", self.description, self.trace_seed);
        for action in &self.actions {
            out.push_str(&action.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug)]
pub enum FuzzVerdict {
    Pass(FuzzStats),
    Fail { stats: FuzzStats, violation: Violation },
}

/// Runs `config.traces` random traces under `scratch` (one session
/// directory per trace, removed afterwards). Stops at the first violation
/// and minimizes it.
pub fn run(config: &FuzzConfig, scratch: &Path) -> FuzzVerdict {
    let mut stats = FuzzStats::default();
    for i in 0..config.traces {
        let trace_seed = config.seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let actions = generate_trace(trace_seed, config);
        let dir = scratch.join(format!("trace-{i}"));
        let outcome = run_trace(&actions, trace_seed, config, &dir);
        let _ = std::fs::remove_dir_all(&dir);
        match outcome {
            Ok(trace_stats) => stats.merge(&trace_stats),
            Err(violation) => {
                let actions = minimize(&violation, trace_seed, config, scratch);
                let violation = Violation {
                    trace_seed,
                    description: violation.description,
                    actions,
                };
                return FuzzVerdict::Fail { stats, violation };
            }
        }
    }
    FuzzVerdict::Pass(stats)
}

fn minimize(
    violation: &Violation,
    trace_seed: u64,
    config: &FuzzConfig,
    scratch: &Path,
) -> Vec<TraceAction> {
    let mut actions = violation.actions.clone();
    let dir = scratch.join("minimize");
    let mut idx = 0;
    while idx < actions.len() {
        let mut candidate = actions.clone();
        candidate.remove(idx);
        let _ = std::fs::remove_dir_all(&dir);
        match run_trace(&candidate, trace_seed, config, &dir) {
            Err(_) => {
                // still failing without this action
                actions = candidate;
            }
            Ok(_) => idx += 1,
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    actions
}

/// From-scratch replay oracle: executes the cell codes along the root path
/// of `target` in a fresh state.
pub fn replay_from_scratch(graph: &CheckpointGraph, target: Timestamp, seed: u64) -> State {
    let mut chain = Vec::new();
    let mut cur = target;
    while !cur.is_root() {
        let node = graph.node(cur).expect("ancestor");
        chain.push(node);
        cur = node.parent;
    }
    chain.reverse();
    let mut state = State::new();
    let mut rng = SessionRng::seeded(seed);
    for node in chain {
        let program = parse(&node.code).expect("committed code parses");
        let _ = execute(&program, &mut state, &mut rng);
        state.heap.collect_garbage(&state.ns.clone());
    }
    state
}

struct TraceRun {
    session: Session,
    stats: FuzzStats,
    executed: Vec<TraceAction>,
    trace_nondet: bool,
}

impl TraceRun {
    fn fail(&self, description: impl Into<String>) -> Violation {
        Violation {
            trace_seed: 0,
            description: description.into(),
            actions: self.executed.clone(),
        }
    }
}

fn extract(state: &State, members: &[String]) -> Option<State> {
    state.extract_component(members).ok()
}

/// Ground truth: did the component of `pre_cv` change across the cell?
fn component_changed(pre_state: &State, post_state: &State, pre_cv: &CoVariable, post_partition: &[CoVariable]) -> bool {
    // deleted member
    if pre_cv.members().iter().any(|m| !post_state.ns.is_bound(m)) {
        return true;
    }
    // membership regrouped
    if !post_partition.iter().any(|cv| cv.id == pre_cv.id) {
        return true;
    }
    // structural change
    let before = extract(pre_state, pre_cv.members());
    let after = extract(post_state, pre_cv.members());
    match (before, after) {
        (Some(b), Some(a)) => !deep_equal(&b, &a),
        _ => true,
    }
}

fn run_trace(
    actions: &[TraceAction],
    trace_seed: u64,
    config: &FuzzConfig,
    dir: &Path,
) -> Result<FuzzStats, Violation> {
    let mut trace_rng = StdRng::seed_from_u64(trace_seed ^ 0x5eed);
    let session_config = SessionConfig {
        snapshots: trace_rng.gen_bool(0.8),
        hash_fastpath: trace_rng.gen_bool(0.7),
        self_heal: trace_rng.gen_bool(0.5),
        seed: trace_seed,
        ..SessionConfig::default()
    };
    let session = Session::init(dir, session_config).map_err(|e| Violation {
        trace_seed,
        description: format!("session init failed: {e}"),
        actions: actions.to_vec(),
    })?;
    let _ = config;
    let mut run = TraceRun {
        session,
        stats: FuzzStats::default(),
        executed: Vec::new(),
        trace_nondet: false,
    };
    for action in actions {
        run.executed.push(action.clone());
        match action {
            TraceAction::Run(src) => step_cell(&mut run, src)?,
            TraceAction::Checkout(t) => step_checkout(&mut run, *t)?,
            TraceAction::Poison { t, nth } => {
                if let Ok(node) = run.session.graph().node(*t) {
                    let with_blobs: Vec<CoVarId> = node
                        .delta
                        .iter()
                        .filter(|vcv| vcv.blob.is_some())
                        .map(|vcv| vcv.covar.clone())
                        .collect();
                    if !with_blobs.is_empty() {
                        let covar = with_blobs[nth % with_blobs.len()].clone();
                        let _ = run.session.poison(&covar, *t);
                    }
                }
            }
        }
    }
    run.stats.traces = 1;
    Ok(run.stats)
}

fn step_cell(run: &mut TraceRun, src: &str) -> Result<(), Violation> {
    let pre_state = run.session.state().clone();
    let pre_partition: Vec<CoVariable> = run.session.partition().to_vec();
    let stats_before = run.session.detector_stats();

    let report = match run.session.run_cell(src) {
        Ok(report) => report,
        Err(e) => return Err(run.fail(format!("run_cell errored: {e}"))),
    };
    run.stats.cells += 1;
    run.trace_nondet |= report.nondeterministic;

    let post_state = run.session.state();
    let post_partition_truth = partition(post_state);

    // partition correctness (incremental vs brute force)
    let live: BTreeSet<(CoVarId, Vec<crate::heap::ObjectId>)> = run
        .session
        .partition()
        .iter()
        .map(|cv| (cv.id.clone(), cv.component.iter().copied().collect()))
        .collect();
    let truth: BTreeSet<(CoVarId, Vec<crate::heap::ObjectId>)> = post_partition_truth
        .iter()
        .map(|cv| (cv.id.clone(), cv.component.iter().copied().collect()))
        .collect();
    if live != truth {
        return Err(run.fail(format!(
            "partition mismatch after {}: incremental {:?} vs brute force {:?}",
            report.t,
            live.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>(),
            truth.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>()
        )));
    }

    // no false negatives + pruning soundness, per pre-cell co-variable
    for pre_cv in &pre_partition {
        let changed = component_changed(&pre_state, post_state, pre_cv, &post_partition_truth);
        let accessed = report.accessed_covariables.contains(&pre_cv.id);
        if changed {
            // every still-bound member must be covered by the delta, and
            // deleted members by deleted_names
            for member in pre_cv.members() {
                let covered = report.deleted_names.contains(member)
                    || report
                        .updated_covariables
                        .iter()
                        .any(|(covar, _)| covar.contains(member));
                if !covered {
                    return Err(run.fail(format!(
                        "false negative at {}: member `{member}` of changed {} not covered by delta",
                        report.t, pre_cv.id
                    )));
                }
            }
            if !accessed {
                return Err(run.fail(format!(
                    "pruning violation at {}: {} changed without any accessed member",
                    report.t, pre_cv.id
                )));
            }
        }
    }

    // false-positive accounting (reported but unchanged, same identity)
    for (covar, _) in &report.updated_covariables {
        run.stats.reported_updates += 1;
        let truly = match pre_partition.iter().find(|cv| cv.id == *covar) {
            Some(pre_cv) => component_changed(&pre_state, post_state, pre_cv, &post_partition_truth),
            None => true, // created or regrouped: a real update
        };
        if truly {
            run.stats.true_updates += 1;
        }
    }

    // work bound: rebuilds this cell <= total members over accessed
    // candidates (check-all ablation is exempt by construction)
    let rebuilds = run.session.detector_stats().vargraph_rebuilds - stats_before.vargraph_rebuilds;
    let bound: usize = pre_partition
        .iter()
        .filter(|cv| report.accessed_covariables.contains(&cv.id))
        .map(|cv| cv.members().len())
        .sum();
    if !run.session.config.check_all && rebuilds > bound as u64 {
        return Err(run.fail(format!(
            "work bound exceeded at {}: {rebuilds} rebuilds > {bound} candidate members",
            report.t
        )));
    }
    Ok(())
}

fn step_checkout(run: &mut TraceRun, target: Timestamp) -> Result<(), Violation> {
    if !run.session.graph().contains(target) {
        return Ok(()); // minimized traces may drop the producing cell
    }
    let current = run.session.head();
    let pre_state = run.session.state().clone();

    // diff soundness oracle on deterministic traces
    let diff = run
        .session
        .graph()
        .diff(current, target)
        .map_err(|e| run.fail(format!("diff failed: {e}")))?;
    if !run.trace_nondet {
        let replayed_current = replay_from_scratch(run.session.graph(), current, run.session.config.seed);
        let replayed_target = replay_from_scratch(run.session.graph(), target, run.session.config.seed);
        for covar in &diff.identical {
            let a = extract(&replayed_current, covar.members());
            let b = extract(&replayed_target, covar.members());
            match (a, b) {
                (Some(a), Some(b)) if deep_equal(&a, &b) => {}
                _ => {
                    return Err(run.fail(format!(
                        "diff soundness violation: {covar} marked identical between {current} and {target} but differs"
                    )))
                }
            }
        }
        for covar in &diff.diverged {
            run.stats.diverged += 1;
            let a = extract(&replayed_current, covar.members());
            let b = extract(&replayed_target, covar.members());
            if let (Some(a), Some(b)) = (a, b) {
                if deep_equal(&a, &b) {
                    run.stats.false_diverged += 1;
                }
            }
        }
    }

    match run.session.checkout(target) {
        Ok(report) => {
            run.stats.checkouts += 1;
            run.stats.replayed_cells += report.cells_replayed;
            if !run.trace_nondet {
                let oracle = replay_from_scratch(run.session.graph(), target, run.session.config.seed);
                if !deep_equal(run.session.state(), &oracle) {
                    return Err(run.fail(format!(
                        "checkout exactness violation: state after checkout({target}) from {current} differs from replay"
                    )));
                }
            }
            // idempotence: immediate repeat loads nothing
            let again = run
                .session
                .checkout(target)
                .map_err(|e| run.fail(format!("repeat checkout failed: {e}")))?;
            if again.loaded_bytes != 0 || again.cells_replayed != 0 {
                return Err(run.fail(format!(
                    "idempotence violation: repeat checkout({target}) loaded {} bytes, replayed {}",
                    again.loaded_bytes, again.cells_replayed
                )));
            }
        }
        Err(Error::RestoreFailed { .. }) => {
            run.stats.restore_failures += 1;
            // atomicity: failed checkout leaves the state untouched
            if !deep_equal(run.session.state(), &pre_state) {
                return Err(run.fail(format!(
                    "atomicity violation: failed checkout({target}) altered the live state"
                )));
            }
            if run.session.head() != current {
                return Err(run.fail(format!(
                    "atomicity violation: failed checkout({target}) moved the head"
                )));
            }
            if !run.trace_nondet {
                return Err(run.fail(format!(
                    "restore failed on a deterministic trace checking out {target}"
                )));
            }
        }
        Err(e) => return Err(run.fail(format!("checkout({target}) errored: {e}"))),
    }
    Ok(())
}

// ---------------------------------------------------------------------
// trace generation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShadowKind {
    Scalar,
    List,
    Map,
    Record,
    Opaque,
}

struct Generator {
    rng: StdRng,
    names: Vec<String>,
    shadow: std::collections::BTreeMap<String, ShadowKind>,
    committed: Vec<Timestamp>,
    next_t: u64,
    tag_counter: u64,
}

/// Generates one action list. The shadow model only tracks rough kinds so
/// most generated cells run cleanly; occasional mismatches and deliberate
/// unbound references exercise the error paths.
pub fn generate_trace(trace_seed: u64, config: &FuzzConfig) -> Vec<TraceAction> {
    let mut g = Generator {
        rng: StdRng::seed_from_u64(trace_seed),
        names: (0..config.max_names).map(|i| format!("n{i}")).collect(),
        shadow: std::collections::BTreeMap::new(),
        committed: Vec::new(),
        next_t: 1,
        tag_counter: 0,
    };
    let cells = g.rng.gen_range(2..=config.max_cells);
    let mut actions = Vec::new();
    for _ in 0..cells {
        if !g.committed.is_empty() && g.rng.gen_bool(config.checkout_rate) {
            let t = *g.committed.choose(&mut g.rng).expect("nonempty");
            actions.push(TraceAction::Checkout(t));
            // generation-side shadow cannot track checkout effects; reset
            // optimism: keep shadow as-is (mismatches just cause benign
            // runtime errors)
        }
        if !g.committed.is_empty() && g.rng.gen_bool(config.poison_rate) {
            let t = *g.committed.choose(&mut g.rng).expect("nonempty");
            let nth = g.rng.gen_range(0..4);
            actions.push(TraceAction::Poison { t, nth });
        }
        let cell = g.generate_cell(config);
        actions.push(TraceAction::Run(cell));
        g.committed.push(Timestamp(g.next_t));
        g.next_t += 1;
    }
    // end every trace with a couple of checkouts across branches
    for _ in 0..2 {
        if let Some(t) = g.committed.choose(&mut g.rng) {
            actions.push(TraceAction::Checkout(*t));
        }
    }
    actions
}

impl Generator {
    fn bound_names(&self) -> Vec<String> {
        self.shadow.keys().cloned().collect()
    }

    fn pick_name(&mut self) -> String {
        self.names[self.rng.gen_range(0..self.names.len())].clone()
    }

    fn pick_bound(&mut self) -> Option<String> {
        let bound = self.bound_names();
        bound.choose(&mut self.rng).cloned()
    }

    fn pick_bound_of(&mut self, kind: ShadowKind) -> Option<String> {
        let bound: Vec<String> = self
            .shadow
            .iter()
            .filter(|(_, k)| **k == kind)
            .map(|(n, _)| n.clone())
            .collect();
        bound.choose(&mut self.rng).cloned()
    }

    fn literal(&mut self) -> String {
        match self.rng.gen_range(0..5) {
            0 => format!("{}", self.rng.gen_range(-100..100)),
            1 => format!("{:?}", (self.rng.gen_range(-1000..1000) as f64) / 8.0),
            2 => format!("'{}'", ["a", "b", "c", "q", "zz"][self.rng.gen_range(0..5)]),
            3 => "true".to_string(),
            _ => "none".to_string(),
        }
    }

    /// A small expression; references existing names to create aliases.
    fn expr(&mut self, depth: usize) -> String {
        if depth == 0 || self.shadow.is_empty() || self.rng.gen_bool(0.55) {
            return self.literal();
        }
        match self.rng.gen_range(0..4) {
            0 => self.pick_bound().unwrap_or_else(|| self.literal()),
            1 => match self.pick_bound_of(ShadowKind::List) {
                Some(n) => format!("{n}[{}]", self.rng.gen_range(0..4)),
                None => self.literal(),
            },
            2 => match self.pick_bound_of(ShadowKind::Record) {
                Some(n) => format!("{n}.f{}", self.rng.gen_range(0..3)),
                None => self.literal(),
            },
            _ => format!("{} + {}", self.expr(depth - 1), self.expr(depth - 1)),
        }
    }

    fn generate_cell(&mut self, config: &FuzzConfig) -> String {
        let mut lines: Vec<String> = Vec::new();
        let statements = self.rng.gen_range(1..=4);
        for _ in 0..statements {
            let roll = self.rng.gen_range(0..100);
            let line = if self.rng.gen_bool(config.error_rate) {
                // deliberate unbound reference
                format!("{} = unbound_{}", self.pick_name(), self.rng.gen_range(0..10))
            } else if roll < 18 {
                let name = self.pick_name();
                let n = self.rng.gen_range(0..6);
                self.shadow.insert(name.clone(), ShadowKind::List);
                if self.rng.gen_bool(0.5) {
                    format!("{name} = range_list({n})")
                } else {
                    let items: Vec<String> = (0..n).map(|_| self.expr(1)).collect();
                    format!("{name} = list({})", items.join(", "))
                }
            } else if roll < 28 {
                let name = self.pick_name();
                self.shadow.insert(name.clone(), ShadowKind::Record);
                let fields: Vec<String> = (0..self.rng.gen_range(0..3))
                    .map(|i| format!("f{i}: {}", self.expr(1)))
                    .collect();
                format!("{name} = record{{{}}}", fields.join(", "))
            } else if roll < 36 {
                let name = self.pick_name();
                self.shadow.insert(name.clone(), ShadowKind::Map);
                let entries: Vec<String> = (0..self.rng.gen_range(0..3))
                    .map(|i| format!("'k{i}': {}", self.expr(1)))
                    .collect();
                format!("{name} = map{{{}}}", entries.join(", "))
            } else if roll < 48 {
                // alias an existing binding
                match self.pick_bound() {
                    Some(src) => {
                        let dst = self.pick_name();
                        let kind = *self.shadow.get(&src).unwrap_or(&ShadowKind::Scalar);
                        self.shadow.insert(dst.clone(), kind);
                        format!("{dst} = {src}")
                    }
                    None => {
                        let name = self.pick_name();
                        self.shadow.insert(name.clone(), ShadowKind::Scalar);
                        format!("{name} = {}", self.literal())
                    }
                }
            } else if roll < 62 {
                // in-place mutation
                match self.rng.gen_range(0..3) {
                    0 => match self.pick_bound_of(ShadowKind::List) {
                        Some(n) => format!("{n}[{}] = {}", self.rng.gen_range(0..4), self.expr(1)),
                        None => self.fallback_create(),
                    },
                    1 => match self.pick_bound_of(ShadowKind::Record) {
                        Some(n) => format!("{n}.f{} = {}", self.rng.gen_range(0..3), self.expr(1)),
                        None => self.fallback_create(),
                    },
                    _ => match self.pick_bound_of(ShadowKind::List) {
                        Some(n) => format!("append({n}, {})", self.expr(1)),
                        None => self.fallback_create(),
                    },
                }
            } else if roll < 68 {
                match self.pick_bound_of(ShadowKind::Map) {
                    Some(n) => {
                        if self.rng.gen_bool(0.5) {
                            format!("{n}['k{}'] = {}", self.rng.gen_range(0..3), self.expr(1))
                        } else {
                            format!("remove_key({n}, 'k{}')", self.rng.gen_range(0..3))
                        }
                    }
                    None => self.fallback_create(),
                }
            } else if roll < 74 {
                match self.pick_bound() {
                    Some(n) => {
                        self.shadow.remove(&n);
                        format!("del {n}")
                    }
                    None => self.fallback_create(),
                }
            } else if roll < 82 {
                // loop mutation
                match self.pick_bound_of(ShadowKind::List) {
                    Some(n) => {
                        let k = self.rng.gen_range(1..4);
                        format!("for i in 0..{k} {{\n    append({n}, i)\n}}")
                    }
                    None => self.fallback_create(),
                }
            } else if roll < 90 {
                // branch, sometimes pure read
                match self.pick_bound() {
                    Some(n) => {
                        let threshold = self.rng.gen_range(0..6);
                        let body = if self.rng.gen_bool(0.5) {
                            let dst = self.pick_name();
                            self.shadow.insert(dst.clone(), ShadowKind::Scalar);
                            format!("{dst} = {threshold}")
                        } else {
                            // taken-branch-empty: the read still logs
                            format!("{} = {}", self.pick_name(), self.literal())
                        };
                        format!("if len({n}) > {threshold} {{\n    {body}\n}}", )
                    }
                    None => self.fallback_create(),
                }
            } else if roll < 95 && config.allow_opaque {
                let name = self.pick_name();
                self.shadow.insert(name.clone(), ShadowKind::Opaque);
                self.tag_counter += 1;
                format!("{name} = opaque('tag{}')", self.tag_counter)
            } else if config.allow_nondet && self.rng.gen_bool(0.5) {
                let name = self.pick_name();
                self.shadow.insert(name.clone(), ShadowKind::Scalar);
                if self.rng.gen_bool(0.5) {
                    format!("{name} = rand()")
                } else {
                    self.tag_counter += 1;
                    format!("{name} = opaque_nondet('tag{}')", self.tag_counter)
                }
            } else {
                self.fallback_create()
            };
            lines.push(line);
        }
        lines.join("\n")
    }

    fn fallback_create(&mut self) -> String {
        let name = self.pick_name();
        self.shadow.insert(name.clone(), ShadowKind::Scalar);
        format!("{name} = {}", self.literal())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_deterministic_fuzz_passes() {
        let scratch = tempfile::tempdir().unwrap();
        let config = FuzzConfig {
            seed: 11,
            traces: 12,
            max_cells: 12,
            max_names: 8,
            ..FuzzConfig::default()
        };
        match run(&config, scratch.path()) {
            FuzzVerdict::Pass(stats) => {
                assert!(stats.cells > 0);
                assert!(stats.checkouts > 0);
            }
            FuzzVerdict::Fail { violation, .. } => {
                panic!("unexpected violation: {}\n{}", violation.description, violation.repro_script());
            }
        }
    }

    #[test]
    fn nondet_fuzz_fails_cleanly_or_passes() {
        let scratch = tempfile::tempdir().unwrap();
        let config = FuzzConfig {
            seed: 5,
            traces: 8,
            max_cells: 10,
            max_names: 6,
            allow_nondet: true,
            poison_rate: 0.3,
            ..FuzzConfig::default()
        };
        match run(&config, scratch.path()) {
            FuzzVerdict::Pass(_) => {}
            FuzzVerdict::Fail { violation, .. } => {
                panic!("nondet traces must not violate invariants: {}", violation.description);
            }
        }
    }

    #[test]
    fn generated_cells_parse() {
        let config = FuzzConfig::default();
        for seed in 0..30 {
            for action in generate_trace(seed, &config) {
                if let TraceAction::Run(src) = action {
                    parse(&src).unwrap_or_else(|e| panic!("generated cell must parse: {e}\n{src}"));
                }
            }
        }
    }
}
