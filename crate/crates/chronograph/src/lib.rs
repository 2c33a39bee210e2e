//! Time-travel versioning for mutable, aliased object-graph session
//! states.
//!
//! A session evolves by executing cells against a namespace of named roots
//! over an aliased object heap. After each cell the engine detects the
//! state delta at co-variable granularity (maximal connected components of
//! names), stores it as an incremental checkpoint in a branch-structured
//! checkpoint graph, and can restore any past state by incremental
//! checkout, replacing only diverged co-variables and recomputing missing
//! ones by recursively replaying recorded cells on their recorded inputs.
//!
//! See the `examples/` directory for one runnable walkthrough per major
//! capability, and the `chrono` binary for the git-style command line.

pub mod bench;
pub mod checkout;
pub mod config;
pub mod detect;
pub mod error;
pub mod graph;
pub mod heap;
pub mod journal;
pub mod fuzz;
pub mod lang;
pub mod session;
pub mod store;

pub use checkout::{CheckoutPlan, CheckoutReport, FallbackChain};
pub use config::SessionConfig;
pub use detect::{
    build_vargraph, candidates, hash_fastpath, partition, CoVarId, CoVariable, Detector,
    DetectorConfig, DetectorStats, StateDelta, VarGraph,
};
pub use error::{Error, Result, RuntimeError};
pub use graph::{CheckpointGraph, CheckpointNode, StateDiff, Timestamp, VersionedCoVariable};
pub use heap::{deep_equal, Heap, HeapObject, Kind, Namespace, ObjectId, Payload, State};
pub use lang::{execute, parse, replay_in_sandbox, AccessLog, CellProgram, ExecOutcome, SessionRng};
pub use session::{CellReport, Session, StatusReport};
pub use store::{BlobDigest, BlobKey, BlobStore, Encoded, SerializedComponent};
