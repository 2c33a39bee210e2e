//! Benchmark harness: scripted workloads measured against two built-in
//! baselines.
//!
//! The `full-dump` baseline reports what serializing the whole state after
//! every cell would cost; the `check-all` ablation re-runs the same cells
//! with candidate pruning disabled and reports detection work. Workloads
//! come from a plain-text spec: `key=value` lines followed by optional
//! `[cell]` blocks of literal cell source.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::graph::Timestamp;
use crate::session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TouchPattern {
    /// Cell `i` touches co-variable `i mod n`.
    RoundRobin,
    /// Seeded uniform choice per cell.
    Random,
    /// Every cell touches the same co-variable.
    Fixed(usize),
}

/// Parsed workload description.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub name: String,
    /// Number of disjoint list co-variables to set up.
    pub covariables: usize,
    /// Elements per list.
    pub elements: usize,
    /// Number of measured mutation cells.
    pub cells: usize,
    pub pattern: TouchPattern,
    pub seed: u64,
    /// Literal cells override the synthesized mutation workload.
    pub explicit_cells: Vec<String>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            name: "workload".into(),
            covariables: 20,
            elements: 1000,
            cells: 50,
            pattern: TouchPattern::RoundRobin,
            seed: 0,
            explicit_cells: Vec::new(),
        }
    }
}

/// Rough encoded bytes per list element (node entry plus child index);
/// used to convert a byte budget into an element count.
pub const BYTES_PER_ELEMENT: usize = 13;

impl WorkloadSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = WorkloadSpec::default();
        let mut lines = text.lines().enumerate().peekable();
        let bad = |lineno: usize, msg: String| Error::Spec(format!("line {}: {msg}", lineno + 1));
        while let Some((lineno, line)) = lines.next() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed == "[cell]" {
                let mut cell = String::new();
                while let Some((_, body)) = lines.peek() {
                    if body.trim() == "[cell]" {
                        break;
                    }
                    let (_, body) = lines.next().expect("peeked");
                    cell.push_str(body);
                    cell.push('\n');
                }
                let cell = cell.trim().to_string();
                if cell.is_empty() {
                    return Err(bad(lineno, "empty [cell] block".into()));
                }
                spec.explicit_cells.push(cell);
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(bad(lineno, format!("expected key=value or [cell], got `{trimmed}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "name" => spec.name = value.to_string(),
                "covariables" => {
                    spec.covariables =
                        value.parse().map_err(|_| bad(lineno, "bad covariables".into()))?
                }
                "elements" => {
                    spec.elements = value.parse().map_err(|_| bad(lineno, "bad elements".into()))?
                }
                "covariable_bytes" => {
                    let bytes: usize =
                        value.parse().map_err(|_| bad(lineno, "bad covariable_bytes".into()))?;
                    spec.elements = (bytes / BYTES_PER_ELEMENT).max(1);
                }
                "cells" => {
                    spec.cells = value.parse().map_err(|_| bad(lineno, "bad cells".into()))?
                }
                "seed" => spec.seed = value.parse().map_err(|_| bad(lineno, "bad seed".into()))?,
                "pattern" => {
                    spec.pattern = match value {
                        "round_robin" => TouchPattern::RoundRobin,
                        "random" => TouchPattern::Random,
                        fixed => match fixed.strip_prefix("fixed:") {
                            Some(k) => TouchPattern::Fixed(
                                k.parse().map_err(|_| bad(lineno, "bad fixed index".into()))?,
                            ),
                            None => return Err(bad(lineno, format!("unknown pattern `{value}`"))),
                        },
                    }
                }
                other => return Err(bad(lineno, format!("unknown key `{other}`"))),
            }
        }
        if spec.covariables == 0 {
            return Err(Error::Spec("covariables must be positive".into()));
        }
        Ok(spec)
    }

    /// Setup cells creating the disjoint list co-variables (unmeasured).
    pub fn setup_cells(&self) -> Vec<String> {
        (0..self.covariables)
            .map(|i| format!("x{i} = range_list({})", self.elements))
            .collect()
    }

    /// The measured cells: explicit blocks if given, otherwise synthesized
    /// single-co-variable mutations following the touch pattern.
    pub fn measured_cells(&self) -> Vec<String> {
        if !self.explicit_cells.is_empty() {
            return self.explicit_cells.clone();
        }
        let mut rng = StdRng::seed_from_u64(self.seed);
        (0..self.cells)
            .map(|i| {
                let k = match self.pattern {
                    TouchPattern::RoundRobin => i % self.covariables,
                    TouchPattern::Random => rng.gen_range(0..self.covariables),
                    TouchPattern::Fixed(k) => k % self.covariables,
                };
                let slot = i % self.elements.max(1);
                format!("x{k}[{slot}] = x{k}[{slot}] + 1")
            })
            .collect()
    }
}

/// Per-measured-cell metrics.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub cell: usize,
    pub t: Timestamp,
    pub detect_ms: f64,
    pub commit_ms: f64,
    /// Blob bytes this cell's incremental checkpoint wrote.
    pub checkpoint_bytes: u64,
    /// Bytes a full state dump after this cell would write.
    pub full_dump_bytes: u64,
    /// Fingerprint rebuilds this cell under pruning.
    pub vargraph_rebuilds: u64,
    /// Journal size after this cell.
    pub journal_bytes: u64,
}

/// Whole-workload result, including the undo measurement and the check-all
/// ablation totals.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub name: String,
    pub rows: Vec<BenchRow>,
    pub incremental_bytes: u64,
    pub full_dump_bytes: u64,
    /// Undoing the last cell: blob bytes actually loaded.
    pub undo_loaded_bytes: u64,
    pub undo_blobs_loaded: u64,
    pub undo_ms: u64,
    /// What a full-dump restore of the target state would load.
    pub undo_full_dump_bytes: u64,
    /// Fingerprint rebuilds across measured cells under pruning.
    pub pruned_rebuilds: u64,
    /// Fingerprint rebuilds across the same cells with pruning disabled.
    pub check_all_rebuilds: u64,
}

impl BenchResult {
    pub fn storage_ratio(&self) -> f64 {
        if self.incremental_bytes == 0 {
            return f64::INFINITY;
        }
        self.full_dump_bytes as f64 / self.incremental_bytes as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "cell,t,detect_ms,commit_ms,checkpoint_bytes,full_dump_bytes,vargraph_rebuilds,journal_bytes\n",
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{},{},{},{}",
                row.cell,
                row.t,
                row.detect_ms,
                row.commit_ms,
                row.checkpoint_bytes,
                row.full_dump_bytes,
                row.vargraph_rebuilds,
                row.journal_bytes
            );
        }
        let _ = writeln!(out, "# name={}", self.name);
        let _ = writeln!(
            out,
            "# incremental_bytes={} full_dump_bytes={} ratio={:.2}",
            self.incremental_bytes,
            self.full_dump_bytes,
            self.storage_ratio()
        );
        let _ = writeln!(
            out,
            "# undo_loaded_bytes={} undo_blobs_loaded={} undo_ms={} undo_full_dump_bytes={}",
            self.undo_loaded_bytes, self.undo_blobs_loaded, self.undo_ms, self.undo_full_dump_bytes
        );
        let _ = writeln!(
            out,
            "# pruned_rebuilds={} check_all_rebuilds={}",
            self.pruned_rebuilds, self.check_all_rebuilds
        );
        out
    }
}

/// Runs the workload in `scratch/incremental`, then replays the same cells
/// in `scratch/check-all` with pruning disabled for the ablation numbers.
///
/// Both passes run with the list-digest fastpath off so the
/// `vargraph_rebuilds` counter measures detection work comparably.
pub fn run_workload(spec: &WorkloadSpec, scratch: &Path) -> Result<BenchResult> {
    let setup = spec.setup_cells();
    let measured = spec.measured_cells();

    let mut session = Session::init(
        scratch.join("incremental"),
        SessionConfig { seed: spec.seed, hash_fastpath: false, ..SessionConfig::default() },
    )?;
    for cell in &setup {
        let report = session.run_cell(cell)?;
        if let Some(err) = report.error {
            return Err(Error::Spec(format!("setup cell failed: {err}")));
        }
    }
    let stats_start = session.detector_stats();

    let mut rows = Vec::with_capacity(measured.len());
    let mut incremental_bytes = 0u64;
    let mut full_dump_bytes = 0u64;
    let mut rebuilds_before = stats_start.vargraph_rebuilds;
    for (i, cell) in measured.iter().enumerate() {
        let report = session.run_cell(cell)?;
        if let Some(err) = report.error {
            return Err(Error::Spec(format!("measured cell {i} failed: {err}")));
        }
        let full_dump = session.full_state_bytes()?;
        let rebuilds_now = session.detector_stats().vargraph_rebuilds;
        incremental_bytes += report.checkpoint_bytes;
        full_dump_bytes += full_dump;
        rows.push(BenchRow {
            cell: i,
            t: report.t,
            detect_ms: report.detect_ms,
            commit_ms: report.commit_ms,
            checkpoint_bytes: report.checkpoint_bytes,
            full_dump_bytes: full_dump,
            vargraph_rebuilds: rebuilds_now - rebuilds_before,
            journal_bytes: session.journal_bytes()?,
        });
        rebuilds_before = rebuilds_now;
    }
    let pruned_rebuilds = session.detector_stats().vargraph_rebuilds - stats_start.vargraph_rebuilds;

    // Undo the last cell: an incremental checkout one node back.
    let head = session.head();
    let undo_target = session.graph().node(head)?.parent;
    let undo = session.checkout(undo_target)?;
    let undo_full_dump_bytes = session.full_state_bytes()?;

    // Ablation: same cells, pruning disabled.
    let mut ablated = Session::init(
        scratch.join("check-all"),
        SessionConfig {
            seed: spec.seed,
            check_all: true,
            hash_fastpath: false,
            ..SessionConfig::default()
        },
    )?;
    for cell in &setup {
        ablated.run_cell(cell)?;
    }
    let ablated_start = ablated.detector_stats().vargraph_rebuilds;
    for cell in &measured {
        ablated.run_cell(cell)?;
    }
    let check_all_rebuilds = ablated.detector_stats().vargraph_rebuilds - ablated_start;

    Ok(BenchResult {
        name: spec.name.clone(),
        rows,
        incremental_bytes,
        full_dump_bytes,
        undo_loaded_bytes: undo.loaded_bytes,
        undo_blobs_loaded: undo.blobs_loaded,
        undo_ms: undo.duration_ms,
        undo_full_dump_bytes,
        pruned_rebuilds,
        check_all_rebuilds,
    })
}

/// Scalability probe: `cells` tiny commits cycling through `names` names;
/// returns (cell index, journal bytes) per commit plus the wall time of a
/// full-depth `diff` from the final head back to the first cell.
pub fn run_scalability(cells: usize, names: usize, scratch: &Path) -> Result<ScalabilityResult> {
    let mut session = Session::init(
        scratch.join("scalability"),
        SessionConfig::default(),
    )?;
    let mut journal_bytes = Vec::with_capacity(cells);
    for i in 0..cells {
        let report = session.run_cell(&format!("v{} = {i}", i % names.max(1)))?;
        debug_assert!(report.error.is_none());
        journal_bytes.push((i as u64 + 1, session.journal_bytes()?));
    }
    let head = session.head();
    let start = Instant::now();
    let diff = session.graph().diff(head, Timestamp(1))?;
    let diff_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ScalabilityResult {
        journal_bytes,
        deep_diff_ms: diff_ms,
        deep_diff_loads: diff.to_load.len(),
    })
}

#[derive(Debug, Clone)]
pub struct ScalabilityResult {
    pub journal_bytes: Vec<(u64, u64)>,
    pub deep_diff_ms: f64,
    pub deep_diff_loads: usize,
}

/// Coefficient of determination of the least-squares line through the
/// points; 1.0 is a perfect linear fit.
pub fn linear_r2(points: &[(u64, u64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 1.0;
    }
    let sx: f64 = points.iter().map(|(x, _)| *x as f64).sum();
    let sy: f64 = points.iter().map(|(_, y)| *y as f64).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (*x as f64).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| *x as f64 * *y as f64).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return 0.0;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|(_, y)| (*y as f64 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| {
            let fit = slope * *x as f64 + intercept;
            (*y as f64 - fit).powi(2)
        })
        .sum();
    if ss_tot == 0.0 {
        return 1.0;
    }
    1.0 - ss_res / ss_tot
}

/// Parses a workload spec from named keys only, for programmatic callers.
pub fn quick_spec(covariables: usize, elements: usize, cells: usize) -> WorkloadSpec {
    WorkloadSpec { covariables, elements, cells, ..WorkloadSpec::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_keys_and_cells() {
        let text = "# demo\nname=mini\ncovariables=3\nelements=10\ncells=5\npattern=fixed:1\n[cell]\nx0[0] = 1\n[cell]\nfor i in 0..2 {\n    append(x1, i)\n}\n";
        let spec = WorkloadSpec::parse(text).unwrap();
        assert_eq!(spec.name, "mini");
        assert_eq!(spec.covariables, 3);
        assert_eq!(spec.pattern, TouchPattern::Fixed(1));
        assert_eq!(spec.explicit_cells.len(), 2);
        assert!(spec.explicit_cells[1].contains("append"));
    }

    #[test]
    fn spec_rejects_garbage() {
        assert!(WorkloadSpec::parse("what").is_err());
        assert!(WorkloadSpec::parse("pattern=sideways").is_err());
        assert!(WorkloadSpec::parse("covariables=0").is_err());
    }

    #[test]
    fn covariable_bytes_converts_to_elements() {
        let spec = WorkloadSpec::parse("covariable_bytes=1300").unwrap();
        assert_eq!(spec.elements, 100);
    }

    #[test]
    fn single_cell_session_equals_full_dump() {
        // one co-variable, one mutation: nothing to prune, incremental
        // bytes equal the dump of the (single-co-variable) state
        let scratch = tempfile::tempdir().unwrap();
        let spec = quick_spec(1, 50, 1);
        let result = run_workload(&spec, scratch.path()).unwrap();
        assert_eq!(result.incremental_bytes, result.full_dump_bytes);
    }

    #[test]
    fn incremental_beats_full_dump_on_sparse_touches() {
        let scratch = tempfile::tempdir().unwrap();
        let spec = quick_spec(10, 200, 20);
        let result = run_workload(&spec, scratch.path()).unwrap();
        assert!(
            result.storage_ratio() > 4.0,
            "expected ≫4x reduction, got {:.2} ({} vs {})",
            result.storage_ratio(),
            result.incremental_bytes,
            result.full_dump_bytes
        );
        assert!(result.check_all_rebuilds > result.pruned_rebuilds);
    }

    #[test]
    fn linear_fit_of_linear_points_is_one() {
        let points: Vec<(u64, u64)> = (1..=100).map(|i| (i, 40 + 7 * i)).collect();
        assert!(linear_r2(&points) > 0.999);
        let noisy: Vec<(u64, u64)> = (1..=100).map(|i| (i, i * i)).collect();
        assert!(linear_r2(&noisy) < 0.99);
    }
}
