//! Append-only metadata journal at `<session>/graph.log`.
//!
//! The file starts with a magic/version header followed by length-prefixed
//! binary records, each carrying a checksum:
//!
//! ```text
//! file   := magic "CHRONOG1" , flags u8 , record*
//! record := len u32 , checksum u64 , body
//! body   := kind u8 , payload            (kind 1 = node, 2 = head move)
//! ```
//!
//! Node payloads hold the node header (timestamp, parent, nondeterminism,
//! code), delta entries, read entries, deleted names, and — when snapshots
//! are materialized — snapshot entries. Strings are length-prefixed, all
//! integers little-endian. Replaying the journal reconstructs the graph
//! and the set of known blob keys; any truncated or checksum-failing
//! record aborts the replay with `CorruptJournal` and no partial state.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::detect::CoVarId;
use crate::error::{Error, Result};
use crate::graph::{CheckpointGraph, CheckpointNode, SessionState, Timestamp, VersionedCoVariable};
use crate::store::{BlobDigest, BlobKey};

const MAGIC: &[u8; 8] = b"CHRONOG1";
const FLAG_SNAPSHOTS: u8 = 0b0000_0001;

const REC_NODE: u8 = 1;
const REC_HEAD: u8 = 2;

fn checksum(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x100_0000_01b3;
    let mut hash = OFFSET;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_covar(out: &mut Vec<u8>, covar: &CoVarId) {
    out.extend_from_slice(&(covar.members().len() as u32).to_le_bytes());
    for m in covar.members() {
        put_str(out, m);
    }
}

fn encode_node(node: &CheckpointNode, snapshots: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(REC_NODE);
    out.extend_from_slice(&node.t.0.to_le_bytes());
    out.extend_from_slice(&node.parent.0.to_le_bytes());
    out.push(u8::from(node.nondeterministic));
    out.push(u8::from(snapshots));
    put_str(&mut out, &node.code);
    out.extend_from_slice(&(node.delta.len() as u32).to_le_bytes());
    for vcv in &node.delta {
        put_covar(&mut out, &vcv.covar);
        out.extend_from_slice(&vcv.t.0.to_le_bytes());
        match &vcv.blob {
            Some(key) => {
                out.push(1);
                out.extend_from_slice(&key.digest.0);
            }
            None => out.push(0),
        }
    }
    out.extend_from_slice(&(node.reads.len() as u32).to_le_bytes());
    for (covar, t) in &node.reads {
        put_covar(&mut out, covar);
        out.extend_from_slice(&t.0.to_le_bytes());
    }
    out.extend_from_slice(&(node.deleted_names.len() as u32).to_le_bytes());
    for name in &node.deleted_names {
        put_str(&mut out, name);
    }
    if snapshots {
        out.extend_from_slice(&(node.state_snapshot.len() as u32).to_le_bytes());
        for (covar, t) in &node.state_snapshot {
            put_covar(&mut out, covar);
            out.extend_from_slice(&t.0.to_le_bytes());
        }
    }
    out
}

struct RecordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    offset: u64,
}

impl<'a> RecordReader<'a> {
    fn corrupt<T>(&self, reason: &str) -> Result<T> {
        Err(Error::CorruptJournal { offset: self.offset, reason: reason.to_string() })
    }

    fn u8(&mut self) -> Result<u8> {
        match self.bytes.get(self.pos) {
            Some(b) => {
                self.pos += 1;
                Ok(*b)
            }
            None => self.corrupt("record too short"),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return self.corrupt("record too short");
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn u64(&mut self) -> Result<u64> {
        if self.pos + 8 > self.bytes.len() {
            return self.corrupt("record too short");
        }
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if self.pos + len > self.bytes.len() {
            return self.corrupt("string overruns record");
        }
        match std::str::from_utf8(&self.bytes[self.pos..self.pos + len]) {
            Ok(s) => {
                let s = s.to_string();
                self.pos += len;
                Ok(s)
            }
            Err(_) => self.corrupt("invalid utf8"),
        }
    }

    fn covar(&mut self) -> Result<CoVarId> {
        let n = self.u32()? as usize;
        let mut members = Vec::with_capacity(n);
        for _ in 0..n {
            members.push(self.str()?);
        }
        Ok(CoVarId::new(members))
    }

    fn digest(&mut self) -> Result<BlobDigest> {
        if self.pos + 32 > self.bytes.len() {
            return self.corrupt("record too short");
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + 32]);
        self.pos += 32;
        Ok(BlobDigest(out))
    }
}

/// One decoded journal record.
pub enum Record {
    Node { node: CheckpointNode, recorded_snapshot: bool },
    Head(Timestamp),
}

fn decode_record(bytes: &[u8], offset: u64) -> Result<Record> {
    let mut r = RecordReader { bytes, pos: 0, offset };
    match r.u8()? {
        REC_NODE => {
            let t = Timestamp(r.u64()?);
            let parent = Timestamp(r.u64()?);
            let nondeterministic = r.u8()? != 0;
            let recorded_snapshot = r.u8()? != 0;
            let code = r.str()?;
            let n_delta = r.u32()? as usize;
            let mut delta = Vec::with_capacity(n_delta);
            for _ in 0..n_delta {
                let covar = r.covar()?;
                let vt = Timestamp(r.u64()?);
                let blob = match r.u8()? {
                    0 => None,
                    1 => Some(BlobKey { covar: covar.clone(), t: vt, digest: r.digest()? }),
                    other => return r.corrupt(&format!("bad blob presence byte {other}")),
                };
                delta.push(VersionedCoVariable { covar, t: vt, blob });
            }
            let n_reads = r.u32()? as usize;
            let mut reads = Vec::with_capacity(n_reads);
            for _ in 0..n_reads {
                let covar = r.covar()?;
                let rt = Timestamp(r.u64()?);
                reads.push((covar, rt));
            }
            let n_deleted = r.u32()? as usize;
            let mut deleted_names = BTreeSet::new();
            for _ in 0..n_deleted {
                deleted_names.insert(r.str()?);
            }
            let mut state_snapshot = SessionState::new();
            if recorded_snapshot {
                let n_snap = r.u32()? as usize;
                for _ in 0..n_snap {
                    let covar = r.covar()?;
                    let st = Timestamp(r.u64()?);
                    state_snapshot.insert(covar, st);
                }
            }
            if r.pos != bytes.len() {
                return r.corrupt("trailing bytes in record");
            }
            Ok(Record::Node {
                node: CheckpointNode::from_journal(
                    t,
                    parent,
                    code,
                    delta,
                    reads,
                    deleted_names,
                    state_snapshot,
                    nondeterministic,
                ),
                recorded_snapshot,
            })
        }
        REC_HEAD => {
            let t = Timestamp(r.u64()?);
            if r.pos != bytes.len() {
                return r.corrupt("trailing bytes in record");
            }
            Ok(Record::Head(t))
        }
        other => r.corrupt(&format!("unknown record kind {other}")),
    }
}

/// Writer half: appends records and fsyncs at commit boundaries.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    snapshots: bool,
}

impl Journal {
    /// Creates a fresh journal file (failing if one exists).
    pub fn create(path: impl Into<PathBuf>, snapshots: bool) -> Result<Self> {
        let path = path.into();
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        file.write_all(MAGIC)?;
        file.write_all(&[if snapshots { FLAG_SNAPSHOTS } else { 0 }])?;
        file.sync_data()?;
        Ok(Journal { path, file, snapshots })
    }

    /// Opens an existing journal for appending; the caller replays it
    /// first via [`replay`].
    pub fn open_append(path: impl Into<PathBuf>, snapshots: bool) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Journal { path, file, snapshots })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&mut self, body: &[u8]) -> Result<()> {
        let mut framed = Vec::with_capacity(body.len() + 12);
        framed.extend_from_slice(&(body.len() as u32).to_le_bytes());
        framed.extend_from_slice(&checksum(body).to_le_bytes());
        framed.extend_from_slice(body);
        self.file.write_all(&framed)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn append_node(&mut self, node: &CheckpointNode) -> Result<()> {
        self.append(&encode_node(node, self.snapshots))
    }

    pub fn append_head(&mut self, t: Timestamp) -> Result<()> {
        let mut body = Vec::with_capacity(9);
        body.push(REC_HEAD);
        body.extend_from_slice(&t.0.to_le_bytes());
        self.append(&body)
    }

    /// Current journal size in bytes (the scalability metric).
    pub fn size_bytes(&self) -> Result<u64> {
        Ok(self.file.metadata()?.len())
    }
}

/// Replays a journal file into a fresh graph, returning the graph and all
/// blob keys referenced by its nodes. Corruption anywhere aborts with no
/// partial state.
pub fn replay(path: &Path, snapshots: bool) -> Result<(CheckpointGraph, Vec<BlobKey>)> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 9 || &raw[..8] != MAGIC {
        return Err(Error::CorruptJournal { offset: 0, reason: "bad magic".into() });
    }
    let recorded_flags = raw[8];
    let _journal_had_snapshots = recorded_flags & FLAG_SNAPSHOTS != 0;
    let mut graph = CheckpointGraph::new(snapshots);
    let mut keys = Vec::new();
    let mut pos = 9usize;
    while pos < raw.len() {
        let offset = pos as u64;
        if pos + 12 > raw.len() {
            return Err(Error::CorruptJournal { offset, reason: "truncated record header".into() });
        }
        let len = u32::from_le_bytes(raw[pos..pos + 4].try_into().unwrap()) as usize;
        let want = u64::from_le_bytes(raw[pos + 4..pos + 12].try_into().unwrap());
        pos += 12;
        if pos + len > raw.len() {
            return Err(Error::CorruptJournal { offset, reason: "truncated record body".into() });
        }
        let body = &raw[pos..pos + len];
        if checksum(body) != want {
            return Err(Error::CorruptJournal { offset, reason: "checksum mismatch".into() });
        }
        pos += len;
        match decode_record(body, offset)? {
            Record::Node { node, recorded_snapshot } => {
                for vcv in &node.delta {
                    if let Some(key) = &vcv.blob {
                        keys.push(key.clone());
                    }
                }
                graph.restore_node(node, recorded_snapshot)?;
            }
            Record::Head(t) => graph.move_head(t)?,
        }
    }
    Ok((graph, keys))
}
