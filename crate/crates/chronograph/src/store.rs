//! Durable storage of co-variable components.
//!
//! A component is serialized as one canonical blob: a version byte, the
//! root bindings (name to local node index), and a flat node table in
//! deterministic first-visit order. Equal components produce identical
//! bytes; decoding yields a component structurally equal to the encoded
//! one, with fresh object identities assigned on instantiation.
//!
//! Blobs live under `<session>/blobs/<2-hex>/<digest>` keyed by the
//! sha-256 of the payload; the digest is re-verified on every load, so
//! on-disk corruption surfaces as `CorruptBlob` and routes the checkout
//! engine to fallback recomputation. Payloads are chunked at 4 MiB inside
//! the blob file. Committed blobs are immutable: rewriting a key is
//! refused except through `heal`, which re-writes known-good bytes after a
//! fallback recomputation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest as _, Sha256};

use crate::detect::CoVarId;
use crate::error::{Error, Result};
use crate::graph::Timestamp;
use crate::heap::{Payload, State};

/// Format version byte leading every serialized component.
const COMPONENT_VERSION: u8 = 0x01;
/// Blob file chunking threshold.
const CHUNK_SIZE: usize = 4 * 1024 * 1024;

/// Content hash of a blob payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlobDigest(pub [u8; 32]);

impl BlobDigest {
    pub fn of(payload: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(payload);
        BlobDigest(hasher.finalize().into())
    }

    pub fn to_hex(self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            out[i] = ((hi << 4) | lo) as u8;
        }
        Some(BlobDigest(out))
    }
}

impl fmt::Display for BlobDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Storage key of one versioned co-variable's payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlobKey {
    pub covar: CoVarId,
    pub t: Timestamp,
    pub digest: BlobDigest,
}

impl fmt::Display for BlobKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.covar, self.t, &self.to_hex_short())
    }
}

impl BlobKey {
    fn to_hex_short(&self) -> String {
        self.digest.to_hex()[..12].to_string()
    }
}

/// Encoding result: components containing opaque objects cannot be
/// serialized; this is a value, not a failure, and such components restore
/// through fallback recomputation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoded {
    Component(SerializedComponent),
    Unserializable { reason: String },
}

/// Canonical byte encoding of one component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedComponent {
    bytes: Vec<u8>,
}

impl SerializedComponent {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        SerializedComponent { bytes }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes the component of `covar` from the live state.
///
/// Local node indices are assigned in deterministic first-visit order over
/// a depth-first walk from the sorted root names, so equal components
/// (including their aliasing pattern) produce identical bytes. Returns
/// `Unserializable` iff any opaque object is reachable, or a reachable
/// opaque tag is on the misbehaving list.
pub fn encode(state: &State, covar: &CoVarId, misbehaving: &BTreeSet<String>) -> Result<Encoded> {
    // Assign local indices in canonical traversal order.
    let mut index: BTreeMap<crate::heap::ObjectId, u32> = BTreeMap::new();
    let mut order: Vec<crate::heap::ObjectId> = Vec::new();
    for name in covar.members() {
        let root = state.ns.lookup(name)?;
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if index.contains_key(&id) {
                continue;
            }
            index.insert(id, order.len() as u32);
            order.push(id);
            let obj = state.heap.get(id);
            if let Payload::Opaque { tag, .. } = &obj.payload {
                let reason = if misbehaving.contains(tag) {
                    format!("opaque tag `{tag}` is on the misbehaving-class list")
                } else {
                    format!("component contains unserializable opaque `{tag}`")
                };
                return Ok(Encoded::Unserializable { reason });
            }
            for (_, child) in obj.children().iter().rev() {
                if !index.contains_key(child) {
                    stack.push(*child);
                }
            }
        }
    }

    let mut bytes = Vec::new();
    bytes.push(COMPONENT_VERSION);
    put_u32(&mut bytes, covar.members().len() as u32);
    for name in covar.members() {
        put_str(&mut bytes, name);
        put_u32(&mut bytes, index[&state.ns.lookup(name)?]);
    }
    put_u32(&mut bytes, order.len() as u32);
    for id in &order {
        let obj = state.heap.get(*id);
        match &obj.payload {
            Payload::Int(v) => {
                bytes.push(0);
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            Payload::Float(v) => {
                bytes.push(1);
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            Payload::Bool(v) => {
                bytes.push(2);
                bytes.push(u8::from(*v));
            }
            Payload::Str(s) => {
                bytes.push(3);
                put_str(&mut bytes, s);
            }
            Payload::None => bytes.push(4),
            Payload::List(items) => {
                bytes.push(5);
                put_u32(&mut bytes, items.len() as u32);
                for item in items {
                    put_u32(&mut bytes, index[item]);
                }
            }
            Payload::Map(entries) | Payload::Record(entries) => {
                bytes.push(if matches!(obj.payload, Payload::Map(_)) { 6 } else { 7 });
                put_u32(&mut bytes, entries.len() as u32);
                for (key, child) in entries {
                    put_str(&mut bytes, key);
                    put_u32(&mut bytes, index[child]);
                }
            }
            Payload::Opaque { .. } => unreachable!("detected above"),
        }
    }
    Ok(Encoded::Component(SerializedComponent { bytes }))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, reason: &str) -> Result<T> {
        Err(Error::CorruptBlob { key: "<decode>".into(), reason: format!("{reason} at offset {}", self.pos) })
    }

    fn u8(&mut self) -> Result<u8> {
        match self.bytes.get(self.pos) {
            Some(b) => {
                self.pos += 1;
                Ok(*b)
            }
            None => self.err("unexpected end of payload"),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return self.err("unexpected end of payload");
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn u64(&mut self) -> Result<u64> {
        if self.pos + 8 > self.bytes.len() {
            return self.err("unexpected end of payload");
        }
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if self.pos + len > self.bytes.len() {
            return self.err("string overruns payload");
        }
        let s = std::str::from_utf8(&self.bytes[self.pos..self.pos + len]);
        match s {
            Ok(s) => {
                let s = s.to_string();
                self.pos += len;
                Ok(s)
            }
            Err(_) => self.err("invalid utf8"),
        }
    }
}

/// Decodes a serialized component into a standalone state holding exactly
/// the component's objects and root bindings.
pub fn decode(component: &SerializedComponent) -> Result<State> {
    let mut r = Reader { bytes: &component.bytes, pos: 0 };
    let version = r.u8()?;
    if version != COMPONENT_VERSION {
        return r.err(&format!("unsupported component version {version:#x}"));
    }
    let n_roots = r.u32()? as usize;
    let mut roots = Vec::with_capacity(n_roots);
    for _ in 0..n_roots {
        let name = r.str()?;
        let idx = r.u32()?;
        roots.push((name, idx));
    }
    let n_nodes = r.u32()? as usize;
    let mut state = State::new();
    let ids: Vec<crate::heap::ObjectId> =
        (0..n_nodes).map(|_| state.heap.alloc(Payload::None)).collect();
    for i in 0..n_nodes {
        let tag = r.u8()?;
        let payload = match tag {
            0 => Payload::Int(r.u64()? as i64),
            1 => Payload::Float(f64::from_bits(r.u64()?)),
            2 => Payload::Bool(r.u8()? != 0),
            3 => Payload::Str(r.str()?),
            4 => Payload::None,
            5 => {
                let n = r.u32()? as usize;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    let idx = r.u32()? as usize;
                    match ids.get(idx) {
                        Some(id) => items.push(*id),
                        None => return r.err("list child index out of range"),
                    }
                }
                Payload::List(items)
            }
            6 | 7 => {
                let n = r.u32()? as usize;
                let mut entries = BTreeMap::new();
                for _ in 0..n {
                    let key = r.str()?;
                    let idx = r.u32()? as usize;
                    match ids.get(idx) {
                        Some(id) => entries.insert(key, *id),
                        None => return r.err("keyed child index out of range"),
                    };
                }
                if tag == 6 {
                    Payload::Map(entries)
                } else {
                    Payload::Record(entries)
                }
            }
            other => return r.err(&format!("unknown node tag {other:#x}")),
        };
        state.heap.get_mut(ids[i]).payload = payload;
    }
    if r.pos != component.bytes.len() {
        return r.err("trailing bytes after component");
    }
    for (name, idx) in roots {
        match ids.get(idx as usize) {
            Some(id) => state.ns.bind(&name, *id),
            None => return Err(Error::CorruptBlob { key: "<decode>".into(), reason: format!("root `{name}` index out of range") }),
        }
    }
    Ok(state)
}

/// Byte-level transfer counters, reset per operation by callers that
/// report them.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoreStats {
    pub blobs_written: u64,
    pub bytes_written: u64,
    pub blobs_loaded: u64,
    pub bytes_loaded: u64,
}

/// Directory-backed blob store with digest verification and injectable
/// corruption for fallback testing.
#[derive(Debug)]
pub struct BlobStore {
    dir: PathBuf,
    known: BTreeSet<BlobKey>,
    pub stats: StoreStats,
}

impl BlobStore {
    /// Opens (creating if needed) the blob directory under a session dir.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BlobStore { dir, known: BTreeSet::new(), stats: StoreStats::default() })
    }

    fn path_of(&self, digest: &BlobDigest) -> PathBuf {
        let hex = digest.to_hex();
        self.dir.join(&hex[..2]).join(&hex)
    }

    /// Registers a key discovered during journal replay so `get`/`poison`
    /// recognize it.
    pub fn register(&mut self, key: &BlobKey) {
        self.known.insert(key.clone());
    }

    pub fn knows(&self, key: &BlobKey) -> bool {
        self.known.contains(key)
    }

    /// Durably writes a payload under a fresh key. The same key may not be
    /// written twice; identical payloads from different keys share the
    /// digest-named file.
    pub fn put(&mut self, key: &BlobKey, payload: &[u8]) -> Result<()> {
        if self.known.contains(key) {
            return Err(Error::RewriteForbidden(key.to_string()));
        }
        debug_assert_eq!(key.digest, BlobDigest::of(payload), "key digest must match payload");
        self.write_file(&key.digest, payload)?;
        self.known.insert(key.clone());
        self.stats.blobs_written += 1;
        self.stats.bytes_written += payload.len() as u64;
        Ok(())
    }

    fn write_file(&self, digest: &BlobDigest, payload: &[u8]) -> Result<()> {
        let path = self.path_of(digest);
        fs::create_dir_all(path.parent().expect("sharded dir"))?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            let chunks: Vec<&[u8]> = payload.chunks(CHUNK_SIZE).collect();
            let n_chunks = if payload.is_empty() { 0 } else { chunks.len() };
            f.write_all(&[COMPONENT_VERSION])?;
            f.write_all(&(n_chunks as u32).to_le_bytes())?;
            f.write_all(&(payload.len() as u64).to_le_bytes())?;
            for chunk in chunks {
                f.write_all(&(chunk.len() as u32).to_le_bytes())?;
                f.write_all(chunk)?;
            }
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Loads and digest-verifies a payload. A mismatch or malformed file
    /// reports `CorruptBlob`, which checkout treats as a load failure
    /// triggering fallback recomputation.
    pub fn get(&mut self, key: &BlobKey) -> Result<Vec<u8>> {
        if !self.known.contains(key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        let path = self.path_of(&key.digest);
        let corrupt = |reason: &str| Error::CorruptBlob { key: key.to_string(), reason: reason.to_string() };
        let mut raw = Vec::new();
        fs::File::open(&path)
            .map_err(|e| corrupt(&format!("cannot open blob file: {e}")))?
            .read_to_end(&mut raw)
            .map_err(|e| corrupt(&format!("cannot read blob file: {e}")))?;
        if raw.len() < 13 || raw[0] != COMPONENT_VERSION {
            return Err(corrupt("bad blob header"));
        }
        let n_chunks = u32::from_le_bytes(raw[1..5].try_into().unwrap()) as usize;
        let total = u64::from_le_bytes(raw[5..13].try_into().unwrap()) as usize;
        let mut payload = Vec::with_capacity(total);
        let mut pos = 13;
        for _ in 0..n_chunks {
            if pos + 4 > raw.len() {
                return Err(corrupt("truncated chunk table"));
            }
            let len = u32::from_le_bytes(raw[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if pos + len > raw.len() {
                return Err(corrupt("truncated chunk"));
            }
            payload.extend_from_slice(&raw[pos..pos + len]);
            pos += len;
        }
        if payload.len() != total {
            return Err(corrupt("chunk lengths disagree with total"));
        }
        if BlobDigest::of(&payload) != key.digest {
            return Err(corrupt("digest mismatch"));
        }
        self.stats.blobs_loaded += 1;
        self.stats.bytes_loaded += payload.len() as u64;
        Ok(payload)
    }

    /// Test hook: corrupts the stored bytes so subsequent `get` fails the
    /// digest check, simulating on-disk damage.
    pub fn poison(&mut self, key: &BlobKey) -> Result<()> {
        if !self.known.contains(key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        let path = self.path_of(&key.digest);
        let mut raw = fs::read(&path)?;
        if let Some(last) = raw.last_mut() {
            *last ^= 0xff;
        } else {
            raw.push(0xff);
        }
        fs::write(&path, raw)?;
        Ok(())
    }

    /// Rewrites known-good bytes for an existing key (the self-healing path
    /// after a fallback recomputation). The payload must match the key's
    /// digest.
    pub fn heal(&mut self, key: &BlobKey, payload: &[u8]) -> Result<()> {
        if !self.known.contains(key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        if BlobDigest::of(payload) != key.digest {
            return Err(Error::CorruptBlob {
                key: key.to_string(),
                reason: "heal payload does not match key digest".into(),
            });
        }
        self.write_file(&key.digest, payload)?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heap::deep_equal;
    use crate::lang::{execute, parse, SessionRng};

    fn run(src: &str, state: &mut State) {
        let program = parse(src).unwrap();
        let mut rng = SessionRng::seeded(3);
        let out = execute(&program, state, &mut rng);
        assert!(out.ok(), "cell failed: {:?}", out.error);
    }

    fn encode_ok(state: &State, covar: &CoVarId) -> SerializedComponent {
        match encode(state, covar, &BTreeSet::new()).unwrap() {
            Encoded::Component(c) => c,
            Encoded::Unserializable { reason } => panic!("unexpectedly unserializable: {reason}"),
        }
    }

    #[test]
    fn shared_reference_encoded_once() {
        let mut st = State::new();
        run("ser = list('a', 'b', 'c')\nobj = record{foo: ser[1]}", &mut st);
        let covar = CoVarId::from(&["ser", "obj"][..]);
        let comp = encode_ok(&st, &covar);
        // 'b' appears exactly once in the payload (str tag + len + byte)
        let needle = b"\x03\x01\x00\x00\x00b";
        let count = comp
            .bytes()
            .windows(needle.len())
            .filter(|w| *w == needle)
            .count();
        assert_eq!(count, 1, "aliased string must be encoded once");
        let decoded = decode(&comp).unwrap();
        let original = st.extract_component(&["obj".into(), "ser".into()]).unwrap();
        assert!(deep_equal(&original, &decoded));
        // decode restores one shared object
        let ser_root = decoded.ns.lookup("ser").unwrap();
        let obj_root = decoded.ns.lookup("obj").unwrap();
        let b_via_ser = decoded.heap.get(ser_root).child_ids()[1];
        let b_via_obj = decoded.heap.get(obj_root).child_ids()[0];
        assert_eq!(b_via_ser, b_via_obj);
    }

    #[test]
    fn trivial_component_round_trips() {
        let mut st = State::new();
        run("x = 1", &mut st);
        let covar = CoVarId::from(&["x"][..]);
        let comp = encode_ok(&st, &covar);
        let decoded = decode(&comp).unwrap();
        let original = st.extract_component(&["x".into()]).unwrap();
        assert!(deep_equal(&original, &decoded));
    }

    #[test]
    fn encoding_is_deterministic_for_equal_components() {
        let mut a = State::new();
        let mut b = State::new();
        // same structure built in different statement orders: ids differ,
        // bytes must not
        run("m = map{'k': 1, 'q': 2.5}\nxs = list(m['k'], 'z')", &mut a);
        run("tmp = 0\nm = map{'q': 2.5, 'k': 1}\nxs = list(m['k'], 'z')\ndel tmp", &mut b);
        let covar = CoVarId::from(&["m", "xs"][..]);
        assert_eq!(encode_ok(&a, &covar).bytes(), encode_ok(&b, &covar).bytes());
    }

    #[test]
    fn opaque_component_is_unserializable() {
        let mut st = State::new();
        run("g = opaque('h')", &mut st);
        let covar = CoVarId::from(&["g"][..]);
        match encode(&st, &covar, &BTreeSet::new()).unwrap() {
            Encoded::Unserializable { reason } => assert!(reason.contains("opaque")),
            Encoded::Component(_) => panic!("opaque must not serialize"),
        }
    }

    #[test]
    fn misbehaving_tag_reported_distinctly() {
        let mut st = State::new();
        run("g = opaque('badclass')", &mut st);
        let covar = CoVarId::from(&["g"][..]);
        let blocked = BTreeSet::from(["badclass".to_string()]);
        match encode(&st, &covar, &blocked).unwrap() {
            Encoded::Unserializable { reason } => assert!(reason.contains("misbehaving")),
            Encoded::Component(_) => panic!("blocked tag must not serialize"),
        }
    }

    #[test]
    fn cyclic_component_round_trips() {
        let mut st = State::new();
        run("r = record{}\nr.me = r\nr.v = 42", &mut st);
        let covar = CoVarId::from(&["r"][..]);
        let comp = encode_ok(&st, &covar);
        let decoded = decode(&comp).unwrap();
        let original = st.extract_component(&["r".into()]).unwrap();
        assert!(deep_equal(&original, &decoded));
    }

    fn store_in_temp() -> (tempfile::TempDir, BlobStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path().join("blobs")).unwrap();
        (dir, store)
    }

    fn key_for(payload: &[u8], names: &[&str], t: u64) -> BlobKey {
        BlobKey { covar: CoVarId::from(names), t: Timestamp(t), digest: BlobDigest::of(payload) }
    }

    #[test]
    fn put_then_get_round_trips() {
        let (_tmp, mut store) = store_in_temp();
        let payload = b"hello component".to_vec();
        let key = key_for(&payload, &["x"], 1);
        store.put(&key, &payload).unwrap();
        assert_eq!(store.get(&key).unwrap(), payload);
        assert_eq!(store.stats.blobs_loaded, 1);
        assert_eq!(store.stats.bytes_loaded, payload.len() as u64);
    }

    #[test]
    fn rewrite_same_key_forbidden() {
        let (_tmp, mut store) = store_in_temp();
        let payload = b"abc".to_vec();
        let key = key_for(&payload, &["x"], 1);
        store.put(&key, &payload).unwrap();
        assert!(matches!(store.put(&key, &payload), Err(Error::RewriteForbidden(_))));
    }

    #[test]
    fn poison_then_heal() {
        let (_tmp, mut store) = store_in_temp();
        let payload = b"precious bytes".to_vec();
        let key = key_for(&payload, &["x"], 1);
        store.put(&key, &payload).unwrap();
        store.poison(&key).unwrap();
        assert!(matches!(store.get(&key), Err(Error::CorruptBlob { .. })));
        store.heal(&key, &payload).unwrap();
        assert_eq!(store.get(&key).unwrap(), payload);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (_tmp, mut store) = store_in_temp();
        let payload = vec![7u8; 1000];
        let key = key_for(&payload, &["x"], 1);
        store.put(&key, &payload).unwrap();
        let path = store.path_of(&key.digest);
        let raw = fs::read(&path).unwrap();
        fs::write(&path, &raw[..raw.len() / 2]).unwrap();
        assert!(matches!(store.get(&key), Err(Error::CorruptBlob { .. })));
    }

    #[test]
    fn unknown_key_errors() {
        let (_tmp, mut store) = store_in_temp();
        let key = key_for(b"x", &["x"], 1);
        assert!(matches!(store.get(&key), Err(Error::UnknownKey(_))));
        assert!(matches!(store.poison(&key), Err(Error::UnknownKey(_))));
    }

    #[test]
    fn chunked_payload_round_trips() {
        let (_tmp, mut store) = store_in_temp();
        // forces 3 chunks
        let payload: Vec<u8> = (0..(2 * CHUNK_SIZE + 17)).map(|i| (i % 251) as u8).collect();
        let key = key_for(&payload, &["big"], 2);
        store.put(&key, &payload).unwrap();
        assert_eq!(store.get(&key).unwrap(), payload);
    }
}
