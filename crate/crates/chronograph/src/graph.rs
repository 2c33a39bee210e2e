//! The checkpoint graph: a rooted tree of per-cell incremental checkpoints
//! with a movable head.
//!
//! Each node records the cell's code, the versioned co-variables it wrote
//! (its state delta), the versioned co-variables it read, deleted names,
//! and a snapshot of the full session-state metadata at that point. The
//! snapshot makes `session_state` O(1); a no-snapshot mode recomputes it
//! from deltas along the root path instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::detect::CoVarId;
use crate::error::{Error, Result};
use crate::store::BlobKey;

/// Strictly increasing commit counter; order matches cell submission
/// order. `Timestamp::ROOT` is the synthetic empty-state node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ROOT: Timestamp = Timestamp(0);

    pub fn is_root(self) -> bool {
        self == Timestamp::ROOT
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            write!(f, "root")
        } else {
            write!(f, "t{}", self.0)
        }
    }
}

impl std::str::FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let body = s.strip_prefix('t').unwrap_or(s);
        if body == "root" {
            return Ok(Timestamp::ROOT);
        }
        body.parse::<u64>()
            .map(Timestamp)
            .map_err(|_| format!("bad checkpoint id `{s}` (expected e.g. `t3`)"))
    }
}

/// A co-variable value produced by one cell execution: identity, the
/// producing timestamp, and where its bytes live. `blob == None` means
/// storage was skipped (unserializable) or failed; such entries restore
/// through fallback recomputation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedCoVariable {
    pub covar: CoVarId,
    pub t: Timestamp,
    pub blob: Option<BlobKey>,
}

impl fmt::Display for VersionedCoVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.covar, self.t)
    }
}

/// Session-state metadata at one node: for each live co-variable identity,
/// the timestamp of its current version.
pub type SessionState = BTreeMap<CoVarId, Timestamp>;

#[derive(Debug, Clone)]
pub struct CheckpointNode {
    pub t: Timestamp,
    pub parent: Timestamp,
    pub code: String,
    pub delta: Vec<VersionedCoVariable>,
    pub reads: Vec<(CoVarId, Timestamp)>,
    pub deleted_names: BTreeSet<String>,
    /// Materialized session-state metadata; empty when running in
    /// no-snapshot mode (recomputed on demand instead).
    pub state_snapshot: SessionState,
    pub nondeterministic: bool,
    depth: u64,
}

impl CheckpointNode {
    /// Node as decoded from a journal record; depth is recomputed when the
    /// node is attached to the graph.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_journal(
        t: Timestamp,
        parent: Timestamp,
        code: String,
        delta: Vec<VersionedCoVariable>,
        reads: Vec<(CoVarId, Timestamp)>,
        deleted_names: BTreeSet<String>,
        state_snapshot: SessionState,
        nondeterministic: bool,
    ) -> Self {
        CheckpointNode {
            t,
            parent,
            code,
            delta,
            reads,
            deleted_names,
            state_snapshot,
            nondeterministic,
            depth: 0,
        }
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    /// The delta entry for one co-variable identity, if this node wrote it.
    pub fn delta_entry(&self, covar: &CoVarId) -> Option<&VersionedCoVariable> {
        self.delta.iter().find(|vcv| &vcv.covar == covar)
    }
}

/// Which co-variables are identical between two states, which diverged,
/// and the resulting load/delete plan for converting the current state
/// into the target state.
#[derive(Debug, Clone)]
pub struct StateDiff {
    /// Identities whose versioned instance appears unchanged in the
    /// current state, the target state, and their lowest common ancestor.
    pub identical: BTreeSet<CoVarId>,
    /// Everything else present in either state.
    pub diverged: BTreeSet<CoVarId>,
    /// Diverged versioned co-variables present in the target state.
    pub to_load: Vec<VersionedCoVariable>,
    /// Diverged identities present only in the current state.
    pub to_delete: BTreeSet<CoVarId>,
}

/// Applies one node's delta and deletions to a parent snapshot: an
/// incoming versioned co-variable removes every entry whose member set
/// intersects its own (covering overwrites, splits, and merges uniformly),
/// and entries containing a deleted name are removed.
pub fn apply_delta(
    parent: &SessionState,
    delta: &[VersionedCoVariable],
    deleted: &BTreeSet<String>,
) -> SessionState {
    let mut out = parent.clone();
    out.retain(|covar, _| {
        !covar.members().iter().any(|m| deleted.contains(m))
            && !delta.iter().any(|vcv| vcv.covar.intersects(covar))
    });
    for vcv in delta {
        out.insert(vcv.covar.clone(), vcv.t);
    }
    out
}

/// Rooted tree of checkpoints. Nodes are immutable once committed; only
/// the head moves.
#[derive(Debug, Clone)]
pub struct CheckpointGraph {
    nodes: BTreeMap<Timestamp, CheckpointNode>,
    head: Timestamp,
    next: u64,
    snapshots: bool,
}

impl Default for CheckpointGraph {
    fn default() -> Self {
        Self::new(true)
    }
}

impl CheckpointGraph {
    /// `snapshots = false` trades O(1) `session_state` for smaller
    /// metadata, recomputing states from deltas along the root path.
    pub fn new(snapshots: bool) -> Self {
        let root = CheckpointNode {
            t: Timestamp::ROOT,
            parent: Timestamp::ROOT,
            code: String::new(),
            delta: Vec::new(),
            reads: Vec::new(),
            deleted_names: BTreeSet::new(),
            state_snapshot: SessionState::new(),
            nondeterministic: false,
            depth: 0,
        };
        CheckpointGraph {
            nodes: BTreeMap::from([(Timestamp::ROOT, root)]),
            head: Timestamp::ROOT,
            next: 1,
            snapshots,
        }
    }

    pub fn snapshots_enabled(&self) -> bool {
        self.snapshots
    }

    pub fn head(&self) -> Timestamp {
        self.head
    }

    pub fn node(&self, t: Timestamp) -> Result<&CheckpointNode> {
        self.nodes.get(&t).ok_or(Error::UnknownTimestamp(t))
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.nodes.contains_key(&t)
    }

    /// Nodes in timestamp order (root first).
    pub fn iter(&self) -> impl Iterator<Item = &CheckpointNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Writes a new node under the head and moves the head to it.
    pub fn commit(
        &mut self,
        delta: Vec<VersionedCoVariable>,
        code: String,
        reads: Vec<(CoVarId, Timestamp)>,
        deleted_names: BTreeSet<String>,
        nondeterministic: bool,
    ) -> Timestamp {
        let t = Timestamp(self.next);
        self.next += 1;
        let parent = self.head;
        let parent_node = self.nodes.get(&parent).expect("head exists");
        let depth = parent_node.depth + 1;
        let state_snapshot = if self.snapshots {
            let snap = apply_delta(&self.parent_state(parent), &delta, &deleted_names);
            // Exhaustive recurrence check against the definitional state on
            // debug builds; quadratic in depth, so bounded to keep deep
            // synthetic benchmarks usable.
            #[cfg(debug_assertions)]
            if depth <= 128 {
                assert_eq!(
                    snap,
                    self.definitional_state_for(parent, &delta, &deleted_names),
                    "snapshot recurrence must match the definitional session state"
                );
            }
            snap
        } else {
            SessionState::new()
        };
        let node = CheckpointNode {
            t,
            parent,
            code,
            delta,
            reads,
            deleted_names,
            state_snapshot,
            nondeterministic,
            depth,
        };
        self.nodes.insert(t, node);
        self.head = t;
        t
    }

    fn parent_state(&self, parent: Timestamp) -> SessionState {
        self.session_state(parent).expect("parent exists")
    }

    /// Re-evaluates the session-state definition from scratch for a
    /// hypothetical child of `parent` (debug-build verification of the
    /// snapshot recurrence).
    fn definitional_state_for(
        &self,
        parent: Timestamp,
        delta: &[VersionedCoVariable],
        deleted: &BTreeSet<String>,
    ) -> SessionState {
        // Fold the root path by the definition quantifiers: an ancestor's
        // delta entry survives iff no later ancestor (or the new cell)
        // overwrites or deletes it.
        let mut chain: Vec<&CheckpointNode> = Vec::new();
        let mut cur = parent;
        loop {
            let node = self.nodes.get(&cur).expect("ancestor");
            chain.push(node);
            if cur.is_root() {
                break;
            }
            cur = node.parent;
        }
        chain.reverse();
        let mut out = SessionState::new();
        for (i, node) in chain.iter().enumerate() {
            'entry: for vcv in &node.delta {
                for later in &chain[i + 1..] {
                    if later.delta.iter().any(|other| other.covar.intersects(&vcv.covar))
                        || vcv.covar.members().iter().any(|m| later.deleted_names.contains(m))
                    {
                        continue 'entry;
                    }
                }
                if delta.iter().any(|other| other.covar.intersects(&vcv.covar))
                    || vcv.covar.members().iter().any(|m| deleted.contains(m))
                {
                    continue 'entry;
                }
                out.insert(vcv.covar.clone(), vcv.t);
            }
        }
        for vcv in delta {
            out.insert(vcv.covar.clone(), vcv.t);
        }
        out
    }

    /// Moves the head without writing a node (the checkout step 3).
    /// Committing afterwards starts a new branch under the target.
    pub fn move_head(&mut self, t: Timestamp) -> Result<()> {
        if !self.contains(t) {
            return Err(Error::UnknownTimestamp(t));
        }
        self.head = t;
        Ok(())
    }

    /// The session state at `t`: each live co-variable identity with the
    /// timestamp of its current version.
    pub fn session_state(&self, t: Timestamp) -> Result<SessionState> {
        let node = self.node(t)?;
        if self.snapshots {
            return Ok(node.state_snapshot.clone());
        }
        // Recompute from deltas along the root path.
        let mut chain: Vec<Timestamp> = Vec::new();
        let mut cur = t;
        loop {
            chain.push(cur);
            if cur.is_root() {
                break;
            }
            cur = self.nodes[&cur].parent;
        }
        chain.reverse();
        let mut state = SessionState::new();
        for ts in chain {
            let node = &self.nodes[&ts];
            state = apply_delta(&state, &node.delta, &node.deleted_names);
        }
        Ok(state)
    }

    /// Deepest common ancestor, via depth-equalized upward parent walks.
    pub fn lca(&self, a: Timestamp, b: Timestamp) -> Result<Timestamp> {
        let mut x = self.node(a)?;
        let mut y = self.node(b)?;
        while x.depth > y.depth {
            x = self.node(x.parent)?;
        }
        while y.depth > x.depth {
            y = self.node(y.parent)?;
        }
        while x.t != y.t {
            x = self.node(x.parent)?;
            y = self.node(y.parent)?;
        }
        Ok(x.t)
    }

    /// Classifies co-variables between two states and derives the load and
    /// delete plan for checking out `target` from `current`.
    ///
    /// A co-variable is identical iff one versioned instance appears in the
    /// session states of `current`, `target`, and their lowest common
    /// ancestor; classification is conservative in the diverged direction.
    pub fn diff(&self, current: Timestamp, target: Timestamp) -> Result<StateDiff> {
        let lca = self.lca(current, target)?;
        let cur_state = self.session_state(current)?;
        let tgt_state = self.session_state(target)?;
        let lca_state = self.session_state(lca)?;

        let mut identical = BTreeSet::new();
        let mut diverged = BTreeSet::new();
        for (covar, t_cur) in &cur_state {
            match (tgt_state.get(covar), lca_state.get(covar)) {
                (Some(t_tgt), Some(t_lca)) if t_cur == t_tgt && t_cur == t_lca => {
                    identical.insert(covar.clone());
                }
                _ => {
                    diverged.insert(covar.clone());
                }
            }
        }
        for covar in tgt_state.keys() {
            if !identical.contains(covar) {
                diverged.insert(covar.clone());
            }
        }

        let mut to_load = Vec::new();
        for (covar, t_ver) in &tgt_state {
            if identical.contains(covar) {
                continue;
            }
            let producer = self.node(*t_ver)?;
            let vcv = producer
                .delta_entry(covar)
                .unwrap_or_else(|| panic!("state entry {covar}@{t_ver} missing from producer delta"))
                .clone();
            to_load.push(vcv);
        }
        let to_delete: BTreeSet<CoVarId> = cur_state
            .keys()
            .filter(|covar| !identical.contains(*covar) && !tgt_state.contains_key(*covar))
            .cloned()
            .collect();

        Ok(StateDiff { identical, diverged, to_load, to_delete })
    }

    /// Graphviz rendering of the tree: head highlighted, deltas labeled.
    pub fn export_dot(&self) -> String {
        let mut out = String::from("digraph checkpoints {\n");
        out.push_str("    rankdir=TB;\n");
        out.push_str("    node [shape=box, fontname=\"monospace\"];\n");
        for node in self.nodes.values() {
            let delta: Vec<String> = node.delta.iter().map(|v| v.covar.to_string()).collect();
            let label = if node.t.is_root() {
                "root".to_string()
            } else if delta.is_empty() {
                format!("{}\\n(no delta)", node.t)
            } else {
                format!("{}\\n{}", node.t, delta.join(" "))
            };
            let highlight = if node.t == self.head { ", penwidth=3, color=crimson" } else { "" };
            out.push_str(&format!("    \"{}\" [label=\"{}\"{}];\n", node.t, label, highlight));
        }
        for node in self.nodes.values() {
            if !node.t.is_root() {
                out.push_str(&format!("    \"{}\" -> \"{}\";\n", node.parent, node.t));
            }
        }
        out.push_str("}\n");
        out
    }

    /// Rebuilds a graph from journal records; used by the session loader.
    /// `recorded_snapshot` says whether the journal record carried snapshot
    /// entries; when it did not and this graph materializes snapshots, the
    /// snapshot is recomputed from the parent.
    pub(crate) fn restore_node(&mut self, node: CheckpointNode, recorded_snapshot: bool) -> Result<()> {
        if !self.nodes.contains_key(&node.parent) {
            return Err(Error::UnknownTimestamp(node.parent));
        }
        let mut node = node;
        node.depth = self.nodes[&node.parent].depth + 1;
        if self.snapshots && !recorded_snapshot {
            node.state_snapshot =
                apply_delta(&self.parent_state(node.parent), &node.delta, &node.deleted_names);
        } else if !self.snapshots {
            node.state_snapshot = SessionState::new();
        }
        self.next = self.next.max(node.t.0 + 1);
        self.head = node.t;
        self.nodes.insert(node.t, node);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covar(names: &[&str]) -> CoVarId {
        CoVarId::from(names)
    }

    fn vcv(names: &[&str], t: u64) -> VersionedCoVariable {
        VersionedCoVariable { covar: covar(names), t: Timestamp(t), blob: None }
    }

    /// The branch scenario: t1 creates df+gmm, t2 refits gmm, t3 plots;
    /// checkout t1, then t4 refits gmm, t5 plots.
    fn branch_scenario() -> CheckpointGraph {
        let mut g = CheckpointGraph::new(true);
        g.commit(
            vec![vcv(&["df"], 1), vcv(&["gmm"], 1)],
            "df = load()".into(),
            vec![],
            BTreeSet::new(),
            false,
        );
        g.commit(
            vec![vcv(&["gmm"], 2)],
            "gmm.fit(3)".into(),
            vec![(covar(&["gmm"]), Timestamp(1))],
            BTreeSet::new(),
            false,
        );
        g.commit(
            vec![vcv(&["plot"], 3)],
            "plot = gmm.result()".into(),
            vec![(covar(&["gmm"]), Timestamp(2))],
            BTreeSet::new(),
            false,
        );
        g.move_head(Timestamp(1)).unwrap();
        g.commit(
            vec![vcv(&["gmm"], 4)],
            "gmm.fit(10)".into(),
            vec![(covar(&["gmm"]), Timestamp(1))],
            BTreeSet::new(),
            false,
        );
        g.commit(
            vec![vcv(&["plot"], 5)],
            "plot = gmm.result()".into(),
            vec![(covar(&["gmm"]), Timestamp(4))],
            BTreeSet::new(),
            false,
        );
        g
    }

    #[test]
    fn session_state_of_branch_scenario() {
        let g = branch_scenario();
        let state = g.session_state(Timestamp(3)).unwrap();
        assert_eq!(
            state,
            SessionState::from([
                (covar(&["plot"]), Timestamp(3)),
                (covar(&["gmm"]), Timestamp(2)),
                (covar(&["df"]), Timestamp(1)),
            ])
        );
        assert!(g.session_state(Timestamp::ROOT).unwrap().is_empty());
    }

    #[test]
    fn commit_after_checkout_branches() {
        let g = branch_scenario();
        assert_eq!(g.node(Timestamp(4)).unwrap().parent, Timestamp(1));
        assert_eq!(g.node(Timestamp(2)).unwrap().parent, Timestamp(1));
        // the pre-checkout branch is unchanged
        assert_eq!(g.node(Timestamp(3)).unwrap().parent, Timestamp(2));
        assert_eq!(g.head(), Timestamp(5));
    }

    #[test]
    fn lca_in_branch_scenario() {
        let g = branch_scenario();
        assert_eq!(g.lca(Timestamp(5), Timestamp(3)).unwrap(), Timestamp(1));
        assert_eq!(g.lca(Timestamp(3), Timestamp(3)).unwrap(), Timestamp(3));
        assert_eq!(g.lca(Timestamp(2), Timestamp(3)).unwrap(), Timestamp(2));
        assert_eq!(g.lca(Timestamp(5), Timestamp::ROOT).unwrap(), Timestamp::ROOT);
    }

    #[test]
    fn diff_branch_scenario() {
        let g = branch_scenario();
        let diff = g.diff(Timestamp(5), Timestamp(3)).unwrap();
        assert_eq!(diff.identical, BTreeSet::from([covar(&["df"])]));
        assert_eq!(diff.diverged, BTreeSet::from([covar(&["gmm"]), covar(&["plot"])]));
        let loads: BTreeSet<(CoVarId, Timestamp)> =
            diff.to_load.iter().map(|v| (v.covar.clone(), v.t)).collect();
        assert_eq!(
            loads,
            BTreeSet::from([
                (covar(&["gmm"]), Timestamp(2)),
                (covar(&["plot"]), Timestamp(3)),
            ])
        );
        assert!(diff.to_delete.is_empty());
    }

    #[test]
    fn diff_self_is_all_identical() {
        let g = branch_scenario();
        let diff = g.diff(Timestamp(5), Timestamp(5)).unwrap();
        assert!(diff.diverged.is_empty());
        assert!(diff.to_load.is_empty());
        assert!(diff.to_delete.is_empty());
        assert_eq!(diff.identical.len(), 3);
    }

    #[test]
    fn diff_to_delete_for_names_absent_from_target() {
        let mut g = CheckpointGraph::new(true);
        g.commit(vec![vcv(&["a"], 1)], "a = 1".into(), vec![], BTreeSet::new(), false);
        g.commit(vec![vcv(&["b"], 2)], "b = 2".into(), vec![], BTreeSet::new(), false);
        let diff = g.diff(Timestamp(2), Timestamp(1)).unwrap();
        assert_eq!(diff.to_delete, BTreeSet::from([covar(&["b"])]));
        assert!(diff.to_load.is_empty());
        assert_eq!(diff.identical, BTreeSet::from([covar(&["a"])]));
    }

    #[test]
    fn overwrite_rule_uses_member_intersection() {
        // {x,y} is overwritten by a split into {x} and {y}; a later merge
        // {x,y} overwrites both.
        let mut g = CheckpointGraph::new(true);
        g.commit(vec![vcv(&["x", "y"], 1)], "".into(), vec![], BTreeSet::new(), false);
        g.commit(vec![vcv(&["x"], 2), vcv(&["y"], 2)], "".into(), vec![], BTreeSet::new(), false);
        let state = g.session_state(Timestamp(2)).unwrap();
        assert_eq!(
            state,
            SessionState::from([
                (covar(&["x"]), Timestamp(2)),
                (covar(&["y"]), Timestamp(2)),
            ])
        );
        g.commit(vec![vcv(&["x", "y"], 3)], "".into(), vec![], BTreeSet::new(), false);
        let state = g.session_state(Timestamp(3)).unwrap();
        assert_eq!(state, SessionState::from([(covar(&["x", "y"]), Timestamp(3))]));
    }

    #[test]
    fn deleted_names_drop_entries() {
        let mut g = CheckpointGraph::new(true);
        g.commit(vec![vcv(&["x"], 1)], "".into(), vec![], BTreeSet::new(), false);
        g.commit(vec![], "del x".into(), vec![], BTreeSet::from(["x".to_string()]), false);
        assert!(g.session_state(Timestamp(2)).unwrap().is_empty());
    }

    #[test]
    fn no_snapshot_mode_matches_snapshot_mode() {
        let snap = branch_scenario();
        let mut lean = CheckpointGraph::new(false);
        for t in 1..=5u64 {
            let node = snap.node(Timestamp(t)).unwrap().clone();
            // mirror the same tree shape
            lean.move_head(node.parent).unwrap();
            lean.commit(node.delta.clone(), node.code.clone(), node.reads.clone(), node.deleted_names.clone(), false);
        }
        for t in 0..=5u64 {
            assert_eq!(
                snap.session_state(Timestamp(t)).unwrap(),
                lean.session_state(Timestamp(t)).unwrap(),
                "t{t}"
            );
        }
    }

    #[test]
    fn empty_delta_keeps_parent_snapshot() {
        let mut g = CheckpointGraph::new(true);
        g.commit(vec![vcv(&["x"], 1)], "".into(), vec![], BTreeSet::new(), false);
        let t = g.commit(vec![], "print".into(), vec![], BTreeSet::new(), false);
        assert_eq!(
            g.session_state(t).unwrap(),
            g.session_state(Timestamp(1)).unwrap()
        );
    }

    #[test]
    fn export_dot_structure() {
        let g = branch_scenario();
        let dot = g.export_dot();
        assert!(dot.contains("\"t1\" -> \"t2\""));
        assert!(dot.contains("\"t1\" -> \"t4\""));
        assert!(dot.contains("\"root\" -> \"t1\""));
        // head highlighted
        assert!(dot.contains("penwidth=3"));
        let empty = CheckpointGraph::new(true);
        assert!(empty.export_dot().contains("root"));
    }

    #[test]
    fn unknown_timestamp_errors() {
        let g = branch_scenario();
        assert!(matches!(g.node(Timestamp(99)), Err(Error::UnknownTimestamp(_))));
        assert!(matches!(g.diff(Timestamp(1), Timestamp(99)), Err(Error::UnknownTimestamp(_))));
    }
}
