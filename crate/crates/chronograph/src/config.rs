//! Session directory configuration: a plain-text `key=value` file at
//! `<session>/config` that round-trips exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    /// Materialize session-state snapshots per node (O(1) state lookups)
    /// or recompute them from deltas along the root path.
    pub snapshots: bool,
    /// Ablation: check every co-variable after each cell instead of
    /// pruning to accessed ones.
    pub check_all: bool,
    /// Digest-based comparison for flat primitive lists.
    pub hash_fastpath: bool,
    /// Seed for the session PRNG behind `rand()`.
    pub seed: u64,
    /// Write recomputed components back over corrupt blobs.
    pub self_heal: bool,
    /// Opaque tags treated as misbehaving (forced unserializable).
    pub misbehaving_tags: BTreeSet<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            snapshots: true,
            check_all: false,
            hash_fastpath: true,
            seed: 0,
            self_heal: true,
            misbehaving_tags: BTreeSet::new(),
        }
    }
}

impl SessionConfig {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            check_all: self.check_all,
            hash_fastpath: self.hash_fastpath,
            misbehaving_tags: self.misbehaving_tags.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = SessionConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Session(format!(
                    "config line {}: expected key=value, got `{line}`",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Session(format!("config line {}: bad {what} value `{value}`", lineno + 1))
            };
            match key {
                "snapshots" => config.snapshots = value.parse().map_err(|_| bad("bool"))?,
                "check_all" => config.check_all = value.parse().map_err(|_| bad("bool"))?,
                "hash_fastpath" => config.hash_fastpath = value.parse().map_err(|_| bad("bool"))?,
                "seed" => config.seed = value.parse().map_err(|_| bad("u64"))?,
                "self_heal" => config.self_heal = value.parse().map_err(|_| bad("bool"))?,
                "misbehaving_tags" => {
                    config.misbehaving_tags = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                }
                other => {
                    return Err(Error::Session(format!(
                        "config line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for SessionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "snapshots={}", self.snapshots)?;
        writeln!(f, "check_all={}", self.check_all)?;
        writeln!(f, "hash_fastpath={}", self.hash_fastpath)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "self_heal={}", self.self_heal)?;
        writeln!(
            f,
            "misbehaving_tags={}",
            self.misbehaving_tags.iter().cloned().collect::<Vec<_>>().join(",")
        )
    }
}
