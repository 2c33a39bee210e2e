//! Co-variable delta detection.
//!
//! A co-variable is a maximal set of variable names whose reachable objects
//! form one connected component; it is the atomic unit of delta detection,
//! storage, and restoration. The detector fingerprints each name's
//! reachable object graph (a `VarGraph`), partitions the namespace into
//! co-variables, and after each cell compares fingerprints of accessed
//! names to decide which co-variables were updated.
//!
//! Detection is conservative: it may report false positives (opaque
//! components are always treated as updated on access) but never false
//! negatives. Only co-variables with an accessed member name are checked
//! at all; the rest are certified unchanged without any traversal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::heap::{EdgeLabel, Kind, ObjectId, Payload, State};
use crate::lang::AccessLog;

/// Co-variable identity across time: the sorted member-name tuple.
/// Splits and merges create new identities; old ones are implicitly
/// retired.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoVarId(Vec<String>);

impl CoVarId {
    pub fn new(mut members: Vec<String>) -> Self {
        members.sort();
        members.dedup();
        CoVarId(members)
    }

    pub fn members(&self) -> &[String] {
        &self.0
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.binary_search_by(|m| m.as_str().cmp(name)).is_ok()
    }

    pub fn intersects(&self, other: &CoVarId) -> bool {
        self.0.iter().any(|m| other.contains(m))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CoVarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.join(","))
    }
}

impl From<&[&str]> for CoVarId {
    fn from(names: &[&str]) -> Self {
        CoVarId::new(names.iter().map(|s| s.to_string()).collect())
    }
}

/// A maximally connected component of names and the objects they reach.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoVariable {
    pub id: CoVarId,
    pub component: BTreeSet<ObjectId>,
}

impl CoVariable {
    pub fn members(&self) -> &[String] {
        self.id.members()
    }
}

/// Canonical primitive payload used in fingerprints; floats are carried as
/// bit patterns so fingerprint equality is exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scalar {
    Int(i64),
    Float(u64),
    Bool(bool),
    Str(String),
    None,
    /// Leaf marker for unserializable objects: the creating expression's
    /// tag plus its replay-safety flag.
    Opaque(String, bool),
}

impl Scalar {
    fn of(payload: &Payload) -> Option<Scalar> {
        match payload {
            Payload::Int(v) => Some(Scalar::Int(*v)),
            Payload::Float(v) => Some(Scalar::Float(v.to_bits())),
            Payload::Bool(v) => Some(Scalar::Bool(*v)),
            Payload::Str(v) => Some(Scalar::Str(v.clone())),
            Payload::None => Some(Scalar::None),
            Payload::Opaque { tag, deterministic } => {
                Some(Scalar::Opaque(format!("opaque:{tag}"), *deterministic))
            }
            _ => None,
        }
    }
}

/// One node of a variable's fingerprint: the object's identity, kind, and
/// primitive value, plus its ordered child edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VgNode {
    pub id: ObjectId,
    pub kind: Kind,
    pub value: Option<Scalar>,
    pub children: Vec<(EdgeLabel, ObjectId)>,
}

/// Per-variable reachability fingerprint. Nodes appear in deterministic
/// first-visit order (depth-first; list children positionally, map/record
/// children in key order), so two fingerprints are equal iff structure,
/// identities, kinds, and primitive values all match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarGraph {
    pub root_name: String,
    pub nodes: Vec<VgNode>,
}

impl VarGraph {
    /// Identities of every reachable object.
    pub fn ids(&self) -> BTreeSet<ObjectId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn contains_opaque(&self) -> bool {
        self.nodes.iter().any(|n| n.kind == Kind::Opaque)
    }

    pub fn opaque_tags(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.value {
                Some(Scalar::Opaque(tag, _)) => {
                    Some(tag.strip_prefix("opaque:").unwrap_or(tag).to_string())
                }
                _ => None,
            })
            .collect()
    }
}

/// Builds the fingerprint for one bound name. Deterministic traversal:
/// depth-first from the binding, children in canonical order, each object
/// expanded once at first visit (cycles terminate).
pub fn build_vargraph(state: &State, name: &str) -> Result<VarGraph> {
    let root = state.ns.lookup(name)?;
    let mut nodes = Vec::new();
    let mut seen: BTreeSet<ObjectId> = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        let obj = state.heap.get(id);
        let children = obj.children();
        // push in reverse so the first child is expanded first
        for (_, child) in children.iter().rev() {
            if !seen.contains(child) {
                stack.push(*child);
            }
        }
        nodes.push(VgNode {
            id,
            kind: obj.kind(),
            value: Scalar::of(&obj.payload),
            children,
        });
    }
    Ok(VarGraph { root_name: name.to_string(), nodes })
}

/// Order-sensitive 64-bit FNV-1a digest over a sequence of scalar values.
/// Two different digests imply the sequences differ; equal digests are
/// treated as equal (documented collision risk).
fn fnv1a(parts: impl Iterator<Item = Vec<u8>>) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(PRIME);
        }
    };
    for part in parts {
        eat(&part);
        eat(&[0xfe]); // element separator
    }
    hash
}

fn scalar_bytes(scalar: &Scalar) -> Vec<u8> {
    let mut out = Vec::new();
    match scalar {
        Scalar::Int(v) => {
            out.push(0);
            out.extend_from_slice(&v.to_le_bytes());
        }
        Scalar::Float(bits) => {
            out.push(1);
            out.extend_from_slice(&bits.to_le_bytes());
        }
        Scalar::Bool(v) => {
            out.push(2);
            out.push(u8::from(*v));
        }
        Scalar::Str(s) => {
            out.push(3);
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Scalar::None => out.push(4),
        Scalar::Opaque(tag, det) => {
            out.push(5);
            out.push(u8::from(*det));
            out.extend_from_slice(tag.as_bytes());
        }
    }
    out
}

/// Order-sensitive digest of a flat primitive list, taken from its
/// fingerprint. Fails with `NotFlat` when the root is not a list or any
/// element is a container, in which case the caller falls back to full
/// fingerprint comparison.
pub fn hash_fastpath(graph: &VarGraph) -> Result<u64> {
    let root = graph.nodes.first().ok_or_else(|| Error::NotFlat("empty graph".into()))?;
    if root.kind != Kind::List {
        return Err(Error::NotFlat(format!("root is {}", root.kind.name())));
    }
    let by_id: HashMap<ObjectId, &VgNode> = graph.nodes.iter().map(|n| (n.id, n)).collect();
    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(root.children.len());
    for (_, child) in &root.children {
        let node = by_id.get(child).expect("child listed in graph");
        match &node.value {
            Some(scalar) if node.kind != Kind::Opaque => parts.push(scalar_bytes(scalar)),
            _ => return Err(Error::NotFlat(format!("element is {}", node.kind.name()))),
        }
    }
    Ok(fnv1a(parts.into_iter()))
}

/// Digest of a flat primitive list read straight off the heap, bypassing
/// fingerprint construction. Produces the same digest as [`hash_fastpath`]
/// on the equivalent fingerprint. Returns the digest together with the
/// component's object ids (root plus elements).
pub fn digest_flat_list(state: &State, name: &str) -> Result<(u64, BTreeSet<ObjectId>)> {
    let root = state.ns.lookup(name)?;
    let obj = state.heap.get(root);
    let Payload::List(items) = &obj.payload else {
        return Err(Error::NotFlat(format!("root is {}", obj.kind().name())));
    };
    let mut ids = BTreeSet::from([root]);
    let mut parts = Vec::with_capacity(items.len());
    for item in items {
        let child = state.heap.get(*item);
        match Scalar::of(&child.payload) {
            Some(scalar) if child.kind() != Kind::Opaque => {
                ids.insert(*item);
                parts.push(scalar_bytes(&scalar));
            }
            _ => return Err(Error::NotFlat(format!("element is {}", child.kind().name()))),
        }
    }
    Ok((fnv1a(parts.into_iter()), ids))
}

/// Partitions the bound names into co-variables: union-find over names,
/// joined whenever their reachable sets share an object.
pub fn partition(state: &State) -> Vec<CoVariable> {
    let names: Vec<String> = state.ns.names().into_iter().collect();
    let closures: Vec<BTreeSet<ObjectId>> = names
        .iter()
        .map(|n| state.reachable(n).expect("bound name"))
        .collect();
    group_by_overlap(&names, &closures)
}

/// Union-find grouping of names whose id sets overlap.
fn group_by_overlap(names: &[String], closures: &[BTreeSet<ObjectId>]) -> Vec<CoVariable> {
    let mut uf = UnionFind::new(names.len());
    let mut owner: HashMap<ObjectId, usize> = HashMap::new();
    for (i, closure) in closures.iter().enumerate() {
        for id in closure {
            match owner.insert(*id, i) {
                Some(j) => uf.union(i, j),
                None => {}
            }
        }
    }
    let mut groups: BTreeMap<usize, (Vec<String>, BTreeSet<ObjectId>)> = BTreeMap::new();
    for i in 0..names.len() {
        let root = uf.find(i);
        let entry = groups.entry(root).or_default();
        entry.0.push(names[i].clone());
        entry.1.extend(closures[i].iter().copied());
    }
    groups
        .into_values()
        .map(|(members, component)| CoVariable { id: CoVarId::new(members), component })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// The co-variables that may have been updated by a cell: exactly those
/// with a member among the accessed names. Every other co-variable is
/// certified unchanged and skipped.
pub fn candidates(prev_partition: &[CoVariable], log: &AccessLog) -> Vec<CoVariable> {
    let accessed = log.accessed();
    prev_partition
        .iter()
        .filter(|cv| cv.members().iter().any(|m| accessed.contains(m)))
        .cloned()
        .collect()
}

/// The per-cell state delta: updated co-variables (modifications,
/// creations, and the survivors of splits/merges), names no longer bound,
/// and which pre-cell co-variables the cell accessed.
#[derive(Debug, Clone)]
pub struct StateDelta {
    /// Updated co-variables with their serializability.
    pub updated: Vec<(CoVariable, bool)>,
    /// Names bound before the cell and absent after it.
    pub deleted_names: BTreeSet<String>,
    /// Identities of pre-cell co-variables accessed by the cell.
    pub accessed_covariables: BTreeSet<CoVarId>,
}

/// Work counters surfaced through `status --stats`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DetectorStats {
    /// Full fingerprint rebuilds of previously tracked names.
    pub vargraph_rebuilds: u64,
    /// Flat-list digest walks taken instead of full rebuilds.
    pub fastpath_checks: u64,
    /// Candidate co-variables examined across all cells.
    pub candidates_checked: u64,
    /// Co-variables in the current partition.
    pub covariables_total: u64,
}

/// Cached per-name fingerprint. Flat primitive lists in single-name
/// co-variables keep only a digest; everything else keeps the full graph.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Fingerprint {
    Graph(VarGraph),
    ListDigest(u64),
}

#[derive(Debug, Clone)]
struct CacheEntry {
    fingerprint: Fingerprint,
    ids: BTreeSet<ObjectId>,
    has_opaque: bool,
    opaque_tags: BTreeSet<String>,
}

/// Detector configuration knobs; see the session config file for the
/// user-facing spellings.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Check every co-variable after each cell instead of pruning to the
    /// accessed ones (benchmark ablation).
    pub check_all: bool,
    /// Allow digest-based comparison for flat primitive lists.
    pub hash_fastpath: bool,
    /// Opaque tags forced unserializable; stands in for a misbehaving-class
    /// blocklist. (Opaque objects are unserializable regardless; the list
    /// is the user-facing override surface.)
    pub misbehaving_tags: BTreeSet<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            check_all: false,
            hash_fastpath: true,
            misbehaving_tags: BTreeSet::new(),
        }
    }
}

/// Incremental detector state: the latest fingerprint per name and the
/// current partition, refreshed only for accessed names after each cell.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    cache: BTreeMap<String, CacheEntry>,
    partition: Vec<CoVariable>,
    pub stats: DetectorStats,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        Detector { config, cache: BTreeMap::new(), partition: Vec::new(), stats: DetectorStats::default() }
    }

    /// Current partition (kept in sync with the live state).
    pub fn partition(&self) -> &[CoVariable] {
        &self.partition
    }

    pub fn covariable_of(&self, name: &str) -> Option<&CoVariable> {
        self.partition.iter().find(|cv| cv.id.contains(name))
    }

    /// Replaces all detector state from a freshly materialized state
    /// (initialization and post-checkout refresh go through here for the
    /// affected names; see `refresh_names`).
    pub fn reset_from_state(&mut self, state: &State) {
        self.cache.clear();
        self.partition = partition(state);
        for name in state.ns.names() {
            let entry = self.build_entry(state, &name, false);
            self.cache.insert(name, entry);
        }
        self.stats.covariables_total = self.partition.len() as u64;
    }

    fn build_entry(&mut self, state: &State, name: &str, count_rebuild: bool) -> CacheEntry {
        let single_member = self
            .partition
            .iter()
            .find(|cv| cv.id.contains(name))
            .map(|cv| cv.id.len() == 1)
            .unwrap_or(false);
        if self.config.hash_fastpath && single_member {
            if let Ok((digest, ids)) = digest_flat_list(state, name) {
                self.stats.fastpath_checks += 1;
                return CacheEntry {
                    fingerprint: Fingerprint::ListDigest(digest),
                    ids,
                    has_opaque: false,
                    opaque_tags: BTreeSet::new(),
                };
            }
        }
        if count_rebuild {
            self.stats.vargraph_rebuilds += 1;
        }
        let graph = build_vargraph(state, name).expect("bound name");
        CacheEntry {
            ids: graph.ids(),
            has_opaque: graph.contains_opaque(),
            opaque_tags: graph.opaque_tags(),
            fingerprint: Fingerprint::Graph(graph),
        }
    }

    /// Detects the state delta of the cell that just ran.
    ///
    /// Checked co-variables are re-fingerprinted member by member and
    /// compared against the cached pre-cell fingerprints; their members are
    /// then re-intersected to discover splits and merges. Newly bound names
    /// form created co-variables. Accessed co-variables containing opaque
    /// objects are always reported updated. The cache and partition are
    /// updated in place to describe the post-cell state.
    pub fn detect_delta(&mut self, state: &State, log: &AccessLog) -> StateDelta {
        let pre_names: BTreeSet<String> = self.cache.keys().cloned().collect();
        let post_names = state.ns.names();

        let accessed_cvs = candidates(&self.partition, log);
        let accessed_ids: BTreeSet<CoVarId> = accessed_cvs.iter().map(|cv| cv.id.clone()).collect();
        let checked: Vec<CoVariable> = if self.config.check_all {
            self.partition.clone()
        } else {
            accessed_cvs
        };
        self.stats.candidates_checked += checked.len() as u64;

        let deleted_names: BTreeSet<String> =
            pre_names.difference(&post_names).cloned().collect();
        let created_names: BTreeSet<String> =
            post_names.difference(&pre_names).cloned().collect();

        // Names needing fresh fingerprints: members of checked co-variables
        // that still exist, plus created names.
        let mut affected: BTreeSet<String> = created_names.clone();
        for cv in &checked {
            for m in cv.members() {
                if post_names.contains(m) {
                    affected.insert(m.clone());
                }
            }
        }

        // Fresh fingerprints for affected names. A digest entry here is
        // provisional: the fastpath only applies to single-name
        // co-variables, and membership is not known until re-intersection.
        let mut new_entries: BTreeMap<String, CacheEntry> = BTreeMap::new();
        for name in &affected {
            let count_rebuild = self.cache.contains_key(name);
            let entry = self.build_entry_post(state, name, count_rebuild);
            new_entries.insert(name.clone(), entry);
        }

        // Re-intersect affected names to find the post-cell grouping.
        let names_vec: Vec<String> = affected.iter().cloned().collect();
        let closures: Vec<BTreeSet<ObjectId>> =
            names_vec.iter().map(|n| new_entries[n].ids.clone()).collect();
        let regrouped = group_by_overlap(&names_vec, &closures);

        // A digest fingerprint is only valid for single-name co-variables;
        // demote members of multi-name groups to full graphs.
        for group in &regrouped {
            if group.id.len() > 1 {
                for m in group.members() {
                    if matches!(new_entries[m].fingerprint, Fingerprint::ListDigest(_)) {
                        let graph = build_vargraph(state, m).expect("bound name");
                        let entry = new_entries.get_mut(m).expect("affected name");
                        if self.cache.contains_key(m) {
                            self.stats.vargraph_rebuilds += 1;
                        }
                        entry.ids = graph.ids();
                        entry.has_opaque = graph.contains_opaque();
                        entry.opaque_tags = graph.opaque_tags();
                        entry.fingerprint = Fingerprint::Graph(graph);
                    }
                }
            }
        }

        let mut updated: Vec<(CoVariable, bool)> = Vec::new();
        let pre_by_id: BTreeMap<CoVarId, &CoVariable> =
            self.partition.iter().map(|cv| (cv.id.clone(), cv)).collect();
        for group in &regrouped {
            let is_created = group.members().iter().any(|m| created_names.contains(m));
            let membership_changed = !pre_by_id.contains_key(&group.id);
            let has_opaque = group.members().iter().any(|m| new_entries[m].has_opaque);
            let value_changed = group.members().iter().any(|m| {
                match (self.cache.get(m).map(|e| &e.fingerprint), &new_entries[m].fingerprint) {
                    (Some(old), new) => old != new,
                    (None, _) => true,
                }
            });
            if is_created || membership_changed || value_changed || has_opaque {
                let serializable = !has_opaque
                    && group
                        .members()
                        .iter()
                        .all(|m| new_entries[m].opaque_tags.is_disjoint(&self.config.misbehaving_tags));
                updated.push((group.clone(), serializable));
            }
        }

        // Commit the new view: drop deleted names, replace affected names,
        // rebuild the partition from surviving groups.
        for name in &deleted_names {
            self.cache.remove(name);
        }
        for (name, entry) in new_entries {
            self.cache.insert(name, entry);
        }
        let affected_or_deleted: BTreeSet<&String> =
            affected.iter().chain(deleted_names.iter()).collect();
        self.partition
            .retain(|cv| !cv.members().iter().any(|m| affected_or_deleted.contains(m)));
        self.partition.extend(regrouped);
        self.partition.sort_by(|a, b| a.id.cmp(&b.id));
        self.stats.covariables_total = self.partition.len() as u64;

        StateDelta { updated, deleted_names, accessed_covariables: accessed_ids }
    }

    fn build_entry_post(&mut self, state: &State, name: &str, count_rebuild: bool) -> CacheEntry {
        // Try the digest walk first; membership is validated afterwards.
        if self.config.hash_fastpath {
            if let Ok((digest, ids)) = digest_flat_list(state, name) {
                self.stats.fastpath_checks += 1;
                return CacheEntry {
                    fingerprint: Fingerprint::ListDigest(digest),
                    ids,
                    has_opaque: false,
                    opaque_tags: BTreeSet::new(),
                };
            }
        }
        if count_rebuild {
            self.stats.vargraph_rebuilds += 1;
        }
        let graph = build_vargraph(state, name).expect("bound name");
        CacheEntry {
            ids: graph.ids(),
            has_opaque: graph.contains_opaque(),
            opaque_tags: graph.opaque_tags(),
            fingerprint: Fingerprint::Graph(graph),
        }
    }

    /// Refreshes the cache and partition for a set of names after a
    /// checkout replaced their components, leaving everything else intact.
    pub fn refresh_names(
        &mut self,
        state: &State,
        loaded: &[CoVariable],
        unbound: &BTreeSet<String>,
    ) {
        for name in unbound {
            self.cache.remove(name);
        }
        self.partition.retain(|cv| {
            !cv.members().iter().any(|m| unbound.contains(m))
                && !loaded.iter().any(|l| l.id.intersects(&cv.id))
        });
        for cv in loaded {
            for m in cv.members() {
                let single = cv.id.len() == 1;
                let entry = if self.config.hash_fastpath && single {
                    match digest_flat_list(state, m) {
                        Ok((digest, ids)) => CacheEntry {
                            fingerprint: Fingerprint::ListDigest(digest),
                            ids,
                            has_opaque: false,
                            opaque_tags: BTreeSet::new(),
                        },
                        Err(_) => self.full_entry(state, m),
                    }
                } else {
                    self.full_entry(state, m)
                };
                self.cache.insert(m.clone(), entry);
            }
            self.partition.push(cv.clone());
        }
        self.partition.sort_by(|a, b| a.id.cmp(&b.id));
        self.stats.covariables_total = self.partition.len() as u64;
    }

    fn full_entry(&mut self, state: &State, name: &str) -> CacheEntry {
        let graph = build_vargraph(state, name).expect("bound name");
        CacheEntry {
            ids: graph.ids(),
            has_opaque: graph.contains_opaque(),
            opaque_tags: graph.opaque_tags(),
            fingerprint: Fingerprint::Graph(graph),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{execute, parse, SessionRng};

    fn run(src: &str, state: &mut State) -> AccessLog {
        let program = parse(src).unwrap();
        let mut rng = SessionRng::seeded(1);
        let out = execute(&program, state, &mut rng);
        assert!(out.ok(), "cell failed: {:?}", out.error);
        out.log
    }

    #[test]
    fn vargraph_single_int() {
        let mut st = State::new();
        run("x = 1", &mut st);
        let g = build_vargraph(&st, "x").unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].kind, Kind::Int);
        assert_eq!(g.nodes[0].value, Some(Scalar::Int(1)));
        assert!(g.nodes[0].children.is_empty());
    }

    #[test]
    fn vargraph_list_three_children() {
        let mut st = State::new();
        run("ser = list('a', 'b', 'c')", &mut st);
        let g = build_vargraph(&st, "ser").unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.nodes[0].kind, Kind::List);
        assert_eq!(g.nodes[0].children.len(), 3);
    }

    #[test]
    fn vargraph_cycle_terminates() {
        let mut st = State::new();
        run("r = record{}\nr.me = r", &mut st);
        let g = build_vargraph(&st, "r").unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes.len(), st.reachable("r").unwrap().len());
    }

    #[test]
    fn partition_shared_and_disjoint() {
        let mut st = State::new();
        run(
            "ser = list('a', 'b', 'c')\nobj = record{foo: ser[1]}\ndf = list(1, 2)",
            &mut st,
        );
        let parts = partition(&st);
        let ids: Vec<CoVarId> = parts.iter().map(|p| p.id.clone()).collect();
        assert!(ids.contains(&CoVarId::from(&["ser", "obj"][..])));
        assert!(ids.contains(&CoVarId::from(&["df"][..])));
        assert_eq!(parts.len(), 2);
    }

    #[test]
    fn candidates_prune_unaccessed() {
        let mut st = State::new();
        run("ser = list('a','b','c')\nobj = record{foo: ser[1]}\ndf = list(1,2)", &mut st);
        let parts = partition(&st);
        let log = AccessLog {
            read_names: BTreeSet::from(["ser".to_string()]),
            written_names: BTreeSet::from(["ser".to_string()]),
            ..AccessLog::default()
        };
        let cands = candidates(&parts, &log);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].id, CoVarId::from(&["ser", "obj"][..]));
    }

    #[test]
    fn candidates_empty_log() {
        let mut st = State::new();
        run("x = 1", &mut st);
        let parts = partition(&st);
        assert!(candidates(&parts, &AccessLog::default()).is_empty());
    }

    fn empty_state() -> State {
        State::new()
    }

    #[test]
    fn detect_split_reports_both_sides() {
        let mut st = State::new();
        let mut det = Detector::new(DetectorConfig::default());
        det.reset_from_state(&empty_state());
        let log = run("ser = list('a','b','c')\nobj = record{foo: ser[1]}", &mut st);
        det.detect_delta(&st, &log);
        // disconnect obj from ser
        let log = run("obj.foo = none", &mut st);
        let delta = det.detect_delta(&st, &log);
        let updated: BTreeSet<CoVarId> =
            delta.updated.iter().map(|(cv, _)| cv.id.clone()).collect();
        assert!(updated.contains(&CoVarId::from(&["ser"][..])));
        assert!(updated.contains(&CoVarId::from(&["obj"][..])));
    }

    #[test]
    fn detect_merge_by_aliasing() {
        let mut st = State::new();
        let mut det = Detector::new(DetectorConfig::default());
        det.reset_from_state(&empty_state());
        let log = run("df = list(1, 2)", &mut st);
        det.detect_delta(&st, &log);
        let log = run("t = df", &mut st);
        let delta = det.detect_delta(&st, &log);
        let updated: BTreeSet<CoVarId> =
            delta.updated.iter().map(|(cv, _)| cv.id.clone()).collect();
        assert!(updated.contains(&CoVarId::from(&["df", "t"][..])));
    }

    #[test]
    fn unchanged_candidate_not_reported() {
        let mut st = State::new();
        let mut det = Detector::new(DetectorConfig::default());
        det.reset_from_state(&empty_state());
        let log = run("x = record{a: 1}", &mut st);
        det.detect_delta(&st, &log);
        // pure read: candidate but unchanged
        let log = run("if x.a > 100 {\n    x.a = 0\n}", &mut st);
        let delta = det.detect_delta(&st, &log);
        assert!(delta.updated.is_empty());
        assert_eq!(
            delta.accessed_covariables,
            BTreeSet::from([CoVarId::from(&["x"][..])])
        );
    }

    #[test]
    fn opaque_updated_on_access() {
        let mut st = State::new();
        let mut det = Detector::new(DetectorConfig::default());
        det.reset_from_state(&empty_state());
        let log = run("g = opaque('h')", &mut st);
        let delta = det.detect_delta(&st, &log);
        assert_eq!(delta.updated.len(), 1);
        assert!(!delta.updated[0].1, "opaque components are unserializable");
        // pure read of g: conservatively updated again
        let log = run("if len('x') == 1 {\n    t = g\n}", &mut st);
        let delta = det.detect_delta(&st, &log);
        let updated: BTreeSet<CoVarId> =
            delta.updated.iter().map(|(cv, _)| cv.id.clone()).collect();
        assert!(updated.contains(&CoVarId::from(&["g", "t"][..])));
    }

    #[test]
    fn fastpath_digests_match_both_routes() {
        let mut st = State::new();
        run("xs = list(1, 2.5, 'a', true, none)", &mut st);
        let g = build_vargraph(&st, "xs").unwrap();
        let via_graph = hash_fastpath(&g).unwrap();
        let (via_heap, ids) = digest_flat_list(&st, "xs").unwrap();
        assert_eq!(via_graph, via_heap);
        assert_eq!(ids, g.ids());
    }

    #[test]
    fn fastpath_rejects_nested() {
        let mut st = State::new();
        run("xs = list(1, list(2))", &mut st);
        let g = build_vargraph(&st, "xs").unwrap();
        assert!(matches!(hash_fastpath(&g), Err(Error::NotFlat(_))));
        run("y = 1", &mut st);
        let g = build_vargraph(&st, "y").unwrap();
        assert!(matches!(hash_fastpath(&g), Err(Error::NotFlat(_))));
    }

    #[test]
    fn fastpath_digest_differs_on_value_change() {
        let mut st = State::new();
        run("xs = list(1, 2, 3)", &mut st);
        let (d1, _) = digest_flat_list(&st, "xs").unwrap();
        run("ys = list(1, 2, 3)", &mut st);
        let (d2, _) = digest_flat_list(&st, "ys").unwrap();
        assert_eq!(d1, d2);
        run("ys[2] = 4", &mut st);
        let (d3, _) = digest_flat_list(&st, "ys").unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn deleted_names_recorded() {
        let mut st = State::new();
        let mut det = Detector::new(DetectorConfig::default());
        det.reset_from_state(&empty_state());
        let log = run("x = 1\ny = x", &mut st);
        det.detect_delta(&st, &log);
        let log = run("del x", &mut st);
        let delta = det.detect_delta(&st, &log);
        assert_eq!(delta.deleted_names, BTreeSet::from(["x".to_string()]));
        let updated: BTreeSet<CoVarId> =
            delta.updated.iter().map(|(cv, _)| cv.id.clone()).collect();
        assert!(updated.contains(&CoVarId::from(&["y"][..])), "split survivor reported");
    }
}
