//! Session state: a namespace of named roots over a heap of possibly
//! aliased objects.
//!
//! Aliasing is identity sharing: two bindings (or two container slots)
//! alias iff they hold the same [`ObjectId`]. Identities are assigned at
//! object creation and never reused within a session, and in-place updates
//! never change the identity of the mutated container. Unreachable objects
//! are collected by mark-and-sweep at cell boundaries only, so identities
//! stay stable while a cell runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// Unique 64-bit identity of a heap object, never reused within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Kind tag of a heap object. Primitive kinds carry a payload and no
/// children; container kinds carry children and no payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str,
    None,
    List,
    Map,
    Record,
    Opaque,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Int => "int",
            Kind::Float => "float",
            Kind::Bool => "bool",
            Kind::Str => "str",
            Kind::None => "none",
            Kind::List => "list",
            Kind::Map => "map",
            Kind::Record => "record",
            Kind::Opaque => "opaque",
        }
    }
}

/// Object contents. Float payloads compare by bit pattern everywhere
/// (deep equality, fingerprints, serialization) so -0.0 and 0.0 stay
/// distinguishable and canonical bytes are well defined.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    None,
    List(Vec<ObjectId>),
    Map(BTreeMap<String, ObjectId>),
    Record(BTreeMap<String, ObjectId>),
    /// Unserializable value modeling generators/hashes: it can be held,
    /// re-bound, and passed, but never serialized. `deterministic` marks
    /// whether the expression that created it is replay-safe.
    Opaque { tag: String, deterministic: bool },
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Int(_) => Kind::Int,
            Payload::Float(_) => Kind::Float,
            Payload::Bool(_) => Kind::Bool,
            Payload::Str(_) => Kind::Str,
            Payload::None => Kind::None,
            Payload::List(_) => Kind::List,
            Payload::Map(_) => Kind::Map,
            Payload::Record(_) => Kind::Record,
            Payload::Opaque { .. } => Kind::Opaque,
        }
    }

    pub fn is_container(&self) -> bool {
        matches!(self, Payload::List(_) | Payload::Map(_) | Payload::Record(_))
    }
}

/// Label of a child edge: positional for lists, string key for maps and
/// records. Lexicographic key order gives every container a total edge
/// order, which canonical serialization and deep equality rely on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeLabel {
    Index(u32),
    Key(String),
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::Index(i) => write!(f, "[{i}]"),
            EdgeLabel::Key(k) => write!(f, ".{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeapObject {
    pub id: ObjectId,
    pub payload: Payload,
}

impl HeapObject {
    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    /// Ordered child edges: list children positionally, map/record children
    /// in lexicographic key order.
    pub fn children(&self) -> Vec<(EdgeLabel, ObjectId)> {
        match &self.payload {
            Payload::List(items) => items
                .iter()
                .enumerate()
                .map(|(i, id)| (EdgeLabel::Index(i as u32), *id))
                .collect(),
            Payload::Map(entries) | Payload::Record(entries) => entries
                .iter()
                .map(|(k, id)| (EdgeLabel::Key(k.clone()), *id))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn child_ids(&self) -> Vec<ObjectId> {
        match &self.payload {
            Payload::List(items) => items.clone(),
            Payload::Map(entries) | Payload::Record(entries) => entries.values().copied().collect(),
            _ => Vec::new(),
        }
    }
}

/// Object storage with session-unique identity assignment.
#[derive(Debug, Clone, Default)]
pub struct Heap {
    objects: HashMap<ObjectId, HeapObject>,
    next_id: u64,
}

impl Heap {
    pub fn new() -> Self {
        Heap { objects: HashMap::new(), next_id: 1 }
    }

    pub fn alloc(&mut self, payload: Payload) -> ObjectId {
        let id = ObjectId(self.next_id);
        self.next_id += 1;
        self.objects.insert(id, HeapObject { id, payload });
        id
    }

    pub fn get(&self, id: ObjectId) -> &HeapObject {
        self.objects.get(&id).expect("dangling ObjectId")
    }

    pub fn get_mut(&mut self, id: ObjectId) -> &mut HeapObject {
        self.objects.get_mut(&id).expect("dangling ObjectId")
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.objects.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Transitive closure over children edges starting at `root`.
    /// Iterative traversal; terminates on cycles.
    pub fn closure(&self, root: ObjectId) -> BTreeSet<ObjectId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            for child in self.get(id).child_ids() {
                if !seen.contains(&child) {
                    stack.push(child);
                }
            }
        }
        seen
    }

    /// Mark-and-sweep from the namespace bindings. Returns the number of
    /// objects dropped. Survivor identities are unchanged. Called at cell
    /// boundaries only.
    pub fn collect_garbage(&mut self, ns: &Namespace) -> usize {
        let mut live = BTreeSet::new();
        for (_, id) in ns.iter() {
            if !live.contains(&id) {
                live.append(&mut self.closure(id));
            }
        }
        let before = self.objects.len();
        self.objects.retain(|id, _| live.contains(id));
        before - self.objects.len()
    }

    /// All object ids currently stored, including unreachable ones not yet
    /// swept.
    pub fn all_ids(&self) -> BTreeSet<ObjectId> {
        self.objects.keys().copied().collect()
    }
}

/// Named roots of the session state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Namespace {
    bindings: BTreeMap<String, ObjectId>,
}

impl Namespace {
    pub fn new() -> Self {
        Namespace { bindings: BTreeMap::new() }
    }

    pub fn bind(&mut self, name: &str, id: ObjectId) {
        self.bindings.insert(name.to_string(), id);
    }

    pub fn lookup(&self, name: &str) -> Result<ObjectId> {
        self.bindings
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnboundVariable(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<ObjectId> {
        self.bindings.get(name).copied()
    }

    pub fn is_bound(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    /// Removes a binding. Objects left unreachable stay in the heap until
    /// the next sweep; survivor identities are unchanged.
    pub fn delete_binding(&mut self, name: &str) -> Result<()> {
        self.bindings
            .remove(name)
            .map(|_| ())
            .ok_or_else(|| Error::UnboundVariable(name.to_string()))
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.bindings.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ObjectId)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

/// A standalone session state: one heap plus the namespace rooted in it.
/// Also used for single-co-variable components extracted from a live state
/// or decoded from storage.
#[derive(Debug, Clone, Default)]
pub struct State {
    pub heap: Heap,
    pub ns: Namespace,
}

impl State {
    pub fn new() -> Self {
        State { heap: Heap::new(), ns: Namespace::new() }
    }

    /// Set of objects reachable from one bound name.
    pub fn reachable(&self, name: &str) -> Result<BTreeSet<ObjectId>> {
        let root = self.ns.lookup(name)?;
        Ok(self.heap.closure(root))
    }

    /// Extracts a standalone copy of the component rooted at `names`,
    /// preserving object identities and the aliasing pattern between them.
    pub fn extract_component(&self, names: &[String]) -> Result<State> {
        let mut out = State::new();
        let mut max_id = 0u64;
        for name in names {
            let root = self.ns.lookup(name)?;
            out.ns.bind(name, root);
            for id in self.heap.closure(root) {
                if !out.heap.objects.contains_key(&id) {
                    out.heap.objects.insert(id, self.heap.get(id).clone());
                    max_id = max_id.max(id.0);
                }
            }
        }
        out.heap.next_id = max_id + 1;
        Ok(out)
    }

    /// Copies every object of `component` into this state's heap under
    /// fresh ids, preserving the aliasing pattern, and binds the component's
    /// names. Returns the new root bindings.
    pub fn instantiate_component(&mut self, component: &State) -> BTreeMap<String, ObjectId> {
        let mut remap: BTreeMap<ObjectId, ObjectId> = BTreeMap::new();
        // First pass: allocate fresh ids with placeholder payloads,
        // in id order so fresh assignment is deterministic.
        let mut old_ids: Vec<ObjectId> = component.heap.objects.keys().copied().collect();
        old_ids.sort();
        for old in &old_ids {
            let fresh = self.heap.alloc(Payload::None);
            remap.insert(*old, fresh);
        }
        // Second pass: rewrite child edges through the id map.
        for old in &old_ids {
            let payload = match &component.heap.get(*old).payload {
                Payload::List(items) => Payload::List(items.iter().map(|c| remap[c]).collect()),
                Payload::Map(entries) => {
                    Payload::Map(entries.iter().map(|(k, c)| (k.clone(), remap[c])).collect())
                }
                Payload::Record(entries) => {
                    Payload::Record(entries.iter().map(|(k, c)| (k.clone(), remap[c])).collect())
                }
                other => other.clone(),
            };
            self.heap.get_mut(remap[old]).payload = payload;
        }
        let mut roots = BTreeMap::new();
        for (name, old_root) in component.ns.iter() {
            let fresh = remap[&old_root];
            self.ns.bind(name, fresh);
            roots.insert(name.to_string(), fresh);
        }
        roots
    }
}

/// Structural equality of two states: true iff there is a bijection between
/// their reachable objects that preserves kinds, primitive values, edge
/// labels and order, and the aliasing pattern, with bound names matching
/// exactly. Float payloads compare by bit pattern.
pub fn deep_equal(a: &State, b: &State) -> bool {
    if a.ns.names() != b.ns.names() {
        return false;
    }
    let mut fwd: HashMap<ObjectId, ObjectId> = HashMap::new();
    let mut rev: HashMap<ObjectId, ObjectId> = HashMap::new();
    let mut stack: Vec<(ObjectId, ObjectId)> = a
        .ns
        .iter()
        .zip(b.ns.iter())
        .map(|((_, x), (_, y))| (x, y))
        .collect();
    while let Some((x, y)) = stack.pop() {
        match (fwd.get(&x), rev.get(&y)) {
            (Some(&fy), Some(&rx)) => {
                if fy != y || rx != x {
                    return false;
                }
                continue; // already matched; don't descend again
            }
            (None, None) => {
                fwd.insert(x, y);
                rev.insert(y, x);
            }
            _ => return false, // one side already claimed by another object
        }
        let (oa, ob) = (a.heap.get(x), b.heap.get(y));
        match (&oa.payload, &ob.payload) {
            (Payload::Int(p), Payload::Int(q)) if p == q => {}
            (Payload::Float(p), Payload::Float(q)) if p.to_bits() == q.to_bits() => {}
            (Payload::Bool(p), Payload::Bool(q)) if p == q => {}
            (Payload::Str(p), Payload::Str(q)) if p == q => {}
            (Payload::None, Payload::None) => {}
            (
                Payload::Opaque { tag: p, deterministic: dp },
                Payload::Opaque { tag: q, deterministic: dq },
            ) if p == q && dp == dq => {}
            (Payload::List(p), Payload::List(q)) if p.len() == q.len() => {
                stack.extend(p.iter().copied().zip(q.iter().copied()));
            }
            (Payload::Map(p), Payload::Map(q)) | (Payload::Record(p), Payload::Record(q))
                if p.len() == q.len() && p.keys().eq(q.keys()) =>
            {
                stack.extend(p.values().copied().zip(q.values().copied()));
            }
            _ => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_chain() -> State {
        // x -> record{foo: 'b'}
        let mut st = State::new();
        let b = st.heap.alloc(Payload::Str("b".into()));
        let rec = st
            .heap
            .alloc(Payload::Record(BTreeMap::from([("foo".to_string(), b)])));
        st.ns.bind("x", rec);
        st
    }

    #[test]
    fn reachable_two_node_chain() {
        let st = two_node_chain();
        let rec = st.ns.lookup("x").unwrap();
        let b = st.heap.get(rec).child_ids()[0];
        assert_eq!(st.reachable("x").unwrap(), BTreeSet::from([rec, b]));
    }

    #[test]
    fn reachable_shared_element() {
        // ser = ['a', 'b', 'c']; obj.foo aliases 'b': 'b' reachable from both.
        let mut st = State::new();
        let a = st.heap.alloc(Payload::Str("a".into()));
        let b = st.heap.alloc(Payload::Str("b".into()));
        let c = st.heap.alloc(Payload::Str("c".into()));
        let ser = st.heap.alloc(Payload::List(vec![a, b, c]));
        let obj = st
            .heap
            .alloc(Payload::Record(BTreeMap::from([("foo".to_string(), b)])));
        st.ns.bind("ser", ser);
        st.ns.bind("obj", obj);
        assert!(st.reachable("ser").unwrap().contains(&b));
        assert!(st.reachable("obj").unwrap().contains(&b));
    }

    #[test]
    fn reachable_unbound_errors() {
        let st = State::new();
        assert!(matches!(st.reachable("nope"), Err(Error::UnboundVariable(_))));
    }

    #[test]
    fn closure_terminates_on_cycles() {
        let mut st = State::new();
        let rec = st.heap.alloc(Payload::Record(BTreeMap::new()));
        // self-reference
        st.heap.get_mut(rec).payload = Payload::Record(BTreeMap::from([("me".to_string(), rec)]));
        st.ns.bind("r", rec);
        assert_eq!(st.reachable("r").unwrap().len(), 1);
    }

    #[test]
    fn deep_equal_alias_vs_copy() {
        // x=[1]; y=x  vs  x=[1]; y=[1]
        let mut aliased = State::new();
        let one = aliased.heap.alloc(Payload::Int(1));
        let l = aliased.heap.alloc(Payload::List(vec![one]));
        aliased.ns.bind("x", l);
        aliased.ns.bind("y", l);

        let mut copied = State::new();
        let one1 = copied.heap.alloc(Payload::Int(1));
        let l1 = copied.heap.alloc(Payload::List(vec![one1]));
        let one2 = copied.heap.alloc(Payload::Int(1));
        let l2 = copied.heap.alloc(Payload::List(vec![one2]));
        copied.ns.bind("x", l1);
        copied.ns.bind("y", l2);

        assert!(deep_equal(&aliased, &aliased.clone()));
        assert!(deep_equal(&copied, &copied.clone()));
        assert!(!deep_equal(&aliased, &copied));
        assert!(!deep_equal(&copied, &aliased));
    }

    #[test]
    fn deep_equal_requires_matching_names() {
        let mut a = State::new();
        let i = a.heap.alloc(Payload::Int(1));
        a.ns.bind("x", i);
        let mut b = State::new();
        let j = b.heap.alloc(Payload::Int(1));
        b.ns.bind("y", j);
        assert!(!deep_equal(&a, &b));
    }

    #[test]
    fn delete_binding_alias_survival() {
        // x=[1]; y=x; del x => list still reachable via y, same ObjectId.
        let mut st = State::new();
        let one = st.heap.alloc(Payload::Int(1));
        let l = st.heap.alloc(Payload::List(vec![one]));
        st.ns.bind("x", l);
        st.ns.bind("y", l);
        st.ns.delete_binding("x").unwrap();
        st.heap.collect_garbage(&st.ns.clone());
        assert_eq!(st.ns.lookup("y").unwrap(), l);
        assert!(st.heap.contains(l));
        assert!(st.heap.contains(one));
    }

    #[test]
    fn delete_sole_binding_drops_objects() {
        let mut st = State::new();
        let one = st.heap.alloc(Payload::Int(1));
        let l = st.heap.alloc(Payload::List(vec![one]));
        st.ns.bind("x", l);
        st.ns.delete_binding("x").unwrap();
        let ns = st.ns.clone();
        let freed = st.heap.collect_garbage(&ns);
        assert_eq!(freed, 2);
        assert!(st.heap.is_empty());
    }

    #[test]
    fn instantiate_preserves_aliasing_with_fresh_ids() {
        let mut st = State::new();
        let shared = st.heap.alloc(Payload::Str("b".into()));
        let l1 = st.heap.alloc(Payload::List(vec![shared, shared]));
        let rec = st
            .heap
            .alloc(Payload::Record(BTreeMap::from([("foo".to_string(), shared)])));
        st.ns.bind("ser", l1);
        st.ns.bind("obj", rec);

        let component = st.extract_component(&["ser".into(), "obj".into()]).unwrap();
        let mut target = State::new();
        let existing = target.heap.alloc(Payload::Int(7));
        target.ns.bind("keep", existing);
        let pre_ids = target.heap.all_ids();
        let roots = target.instantiate_component(&component);

        // identities are fresh with respect to the target heap
        for id in target.heap.all_ids().difference(&pre_ids) {
            assert!(!pre_ids.contains(id));
        }
        assert!(roots.values().all(|id| !pre_ids.contains(id)));
        target.ns.delete_binding("keep").unwrap();
        target.heap.collect_garbage(&target.ns.clone());
        assert!(deep_equal(&st, &target));
    }
}
