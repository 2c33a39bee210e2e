//! Git-style command line for chronograph sessions.
//!
//! The session directory comes from `--session`, then the
//! `CHRONO_SESSION` environment variable, then `./.chrono`.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chronograph::bench::{run_workload, WorkloadSpec};
use chronograph::fuzz::{self, FuzzConfig, FuzzVerdict};
use chronograph::{Error, Session, SessionConfig, Timestamp};

#[derive(Parser)]
#[command(name = "chrono", version, about = "Time-travel versioning for scripted session states")]
struct Cli {
    /// Session directory (overrides CHRONO_SESSION and the default
    /// ./.chrono)
    #[arg(short, long, global = true)]
    session: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a session directory, or reopen an existing one
    Init {
        /// Recompute session-state metadata from deltas instead of
        /// materializing per-node snapshots
        #[arg(long)]
        no_snapshots: bool,
        /// Disable candidate pruning (benchmark ablation)
        #[arg(long)]
        check_all: bool,
        /// Disable the flat-list digest fastpath
        #[arg(long)]
        no_hash_fastpath: bool,
        /// Seed for the session PRNG behind rand()
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated opaque tags to treat as misbehaving
        /// (forced unserializable)
        #[arg(long, default_value = "")]
        misbehaving: String,
    },
    /// Execute one cell (or a file of cells) and commit checkpoints
    Run {
        /// Inline cell source
        #[arg(short = 'e', long = "expr", conflicts_with = "file")]
        source: Option<String>,
        /// File of cells separated by `# %%` lines
        file: Option<PathBuf>,
        /// Print per-cell timing and counter details
        #[arg(long)]
        stats: bool,
    },
    /// Read cells from stdin; a blank line submits the current cell
    Repl,
    /// List checkpoints with their branch structure
    Log {
        /// Emit Graphviz DOT instead of text
        #[arg(long)]
        dot: bool,
    },
    /// Show the head, bound names, and co-variables
    Status {
        /// Include detector and store counters
        #[arg(long)]
        stats: bool,
    },
    /// Restore the session to a checkpoint
    Checkout {
        /// Target id, e.g. t3
        id: String,
        /// Emit the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Run a scripted workload against the built-in baselines; prints CSV
    Bench {
        /// Workload spec file (key=value lines plus [cell] blocks)
        spec: PathBuf,
    },
    /// Randomized oracle-equivalence testing
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Allow rand() and nondeterministic opaques in generated cells
        #[arg(long)]
        nondet: bool,
        /// Where to write the repro script on failure
        #[arg(long, default_value = "fuzz-repro.cells")]
        repro: PathBuf,
    },
    /// Print the checkpoint tree as Graphviz DOT (alias of `log --dot`)
    ExportDot,
}

fn session_dir(cli: &Cli) -> PathBuf {
    cli.session
        .clone()
        .or_else(|| std::env::var_os("CHRONO_SESSION").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("./.chrono"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn open(cli: &Cli) -> Result<Session, Error> {
    Session::open(session_dir(cli))
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Init { no_snapshots, check_all, no_hash_fastpath, seed, misbehaving } => {
            let dir = session_dir(cli);
            if dir.join("graph.log").exists() {
                let session = Session::open(&dir)?;
                println!(
                    "reopened session at {} ({} cells, head {})",
                    dir.display(),
                    session.graph().len() - 1,
                    session.head()
                );
            } else {
                let config = SessionConfig {
                    snapshots: !no_snapshots,
                    check_all: *check_all,
                    hash_fastpath: !no_hash_fastpath,
                    seed: *seed,
                    misbehaving_tags: misbehaving
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect(),
                    ..SessionConfig::default()
                };
                Session::init(&dir, config)?;
                println!("initialized session at {}", dir.display());
            }
            Ok(())
        }
        Command::Run { source, file, stats } => {
            let mut session = open(cli)?;
            let cells: Vec<String> = match (source, file) {
                (Some(src), None) => vec![src.clone()],
                (None, Some(path)) => split_cells(&std::fs::read_to_string(path)?),
                (None, None) => {
                    return Err(Error::Session("pass -e SRC or a file of cells".into()))
                }
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            };
            for cell in cells {
                run_one(&mut session, &cell, *stats)?;
            }
            Ok(())
        }
        Command::Repl => {
            let mut session = open(cli)?;
            println!("session {} at head {}; blank line submits a cell", session.dir().display(), session.head());
            let stdin = std::io::stdin();
            let mut cell = String::new();
            print_prompt();
            for line in stdin.lock().lines() {
                let line = line?;
                if line.trim().is_empty() {
                    if !cell.trim().is_empty() {
                        if let Err(e) = run_one(&mut session, &cell, false) {
                            eprintln!("error: {e}");
                        }
                    }
                    cell.clear();
                } else {
                    cell.push_str(&line);
                    cell.push('\n');
                }
                print_prompt();
            }
            if !cell.trim().is_empty() {
                run_one(&mut session, &cell, false)?;
            }
            Ok(())
        }
        Command::Log { dot } => {
            let session = open(cli)?;
            if *dot {
                print!("{}", session.graph().export_dot());
            } else {
                print_log(&session);
            }
            Ok(())
        }
        Command::ExportDot => {
            let session = open(cli)?;
            print!("{}", session.graph().export_dot());
            Ok(())
        }
        Command::Status { stats } => {
            let session = open(cli)?;
            let status = session.status();
            println!("head: {}", status.head);
            println!("cells: {}", status.cells);
            println!(
                "names: {}",
                if status.names.is_empty() { "(none)".into() } else { status.names.join(" ") }
            );
            let covars: Vec<String> = status.covariables.iter().map(|c| c.to_string()).collect();
            println!("co-variables: {}", if covars.is_empty() { "(none)".into() } else { covars.join(" ") });
            if *stats {
                println!("vargraph_rebuilds: {}", status.detector.vargraph_rebuilds);
                println!("fastpath_checks: {}", status.detector.fastpath_checks);
                println!("candidates_checked: {}", status.detector.candidates_checked);
                println!("covariables_total: {}", status.detector.covariables_total);
                println!("blobs_written: {}", status.store.blobs_written);
                println!("bytes_written: {}", status.store.bytes_written);
                println!("blobs_loaded: {}", status.store.blobs_loaded);
                println!("bytes_loaded: {}", status.store.bytes_loaded);
            }
            Ok(())
        }
        Command::Checkout { id, json } => {
            let mut session = open(cli)?;
            let target: Timestamp = id
                .parse()
                .map_err(Error::Session)?;
            if target == session.head() {
                println!("already at {target}");
                return Ok(());
            }
            let report = session.checkout(target)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                println!(
                    "checked out {}: {} bytes in {} blobs, {} cells replayed, {} co-variables deleted, {} ms",
                    report.target,
                    report.loaded_bytes,
                    report.blobs_loaded,
                    report.cells_replayed,
                    report.covariables_deleted,
                    report.duration_ms
                );
                if report.healed_blobs > 0 {
                    println!("healed {} corrupt blob(s) from recomputed bytes", report.healed_blobs);
                }
            }
            Ok(())
        }
        Command::Bench { spec } => {
            let text = std::fs::read_to_string(spec)?;
            let spec = WorkloadSpec::parse(&text)?;
            let scratch = std::env::temp_dir().join(format!("chrono-bench-{}", std::process::id()));
            let result = run_workload(&spec, &scratch);
            let _ = std::fs::remove_dir_all(&scratch);
            print!("{}", result?.to_csv());
            Ok(())
        }
        Command::Fuzz { seed, n, nondet, repro } => {
            let config = FuzzConfig {
                seed: *seed,
                traces: *n,
                allow_nondet: *nondet,
                ..FuzzConfig::default()
            };
            let scratch = std::env::temp_dir().join(format!("chrono-fuzz-{}", std::process::id()));
            let verdict = fuzz::run(&config, &scratch);
            let _ = std::fs::remove_dir_all(&scratch);
            match verdict {
                FuzzVerdict::Pass(stats) => {
                    println!(
                        "PASS: {} traces, {} cells, {} checkouts ({} clean restore failures), {} replayed cells",
                        stats.traces, stats.cells, stats.checkouts, stats.restore_failures, stats.replayed_cells
                    );
                    println!(
                        "updates reported: {} (false-positive rate {:.4}); diverged: {} (false-diverged rate {:.4})",
                        stats.reported_updates,
                        stats.false_positive_rate(),
                        stats.diverged,
                        stats.false_diverged_rate()
                    );
                    Ok(())
                }
                FuzzVerdict::Fail { stats, violation } => {
                    eprintln!("FAIL after {} traces: {}", stats.traces, violation.description);
                    std::fs::write(repro, violation.repro_script())?;
                    eprintln!("minimized repro written to {}", repro.display());
                    Err(Error::Session(format!("fuzz violation: {}", violation.description)))
                }
            }
        }
    }
}

fn print_prompt() {
    print!("> ");
    let _ = std::io::stdout().flush();
}

fn run_one(session: &mut Session, source: &str, stats: bool) -> Result<(), Error> {
    let report = session.run_cell(source)?;
    let updated = match report.updated {
        1 => "1 co-variable updated".to_string(),
        n => format!("{n} co-variables updated"),
    };
    let deleted = if report.deleted > 0 {
        format!(", {} name(s) deleted", report.deleted)
    } else {
        String::new()
    };
    println!("committed {}, {updated}{deleted}", report.t);
    for warning in &report.warnings {
        println!("  warning: {warning}");
    }
    if let Some(err) = &report.error {
        println!("  cell error: {err} (state changes before the failure are kept)");
    }
    if stats {
        println!(
            "  detect {:.3} ms, commit {:.3} ms, {} checkpoint bytes",
            report.detect_ms, report.commit_ms, report.checkpoint_bytes
        );
    }
    Ok(())
}

/// Splits a cell file on lines starting with `# %%`.
fn split_cells(text: &str) -> Vec<String> {
    let mut cells = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim_start().starts_with("# %%") {
            if !current.trim().is_empty() {
                cells.push(current.trim().to_string());
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        cells.push(current.trim().to_string());
    }
    cells
}

fn print_log(session: &Session) {
    // children listed per parent so branches are visible
    let graph = session.graph();
    let head = session.head();
    let mut children: std::collections::BTreeMap<Timestamp, Vec<Timestamp>> =
        std::collections::BTreeMap::new();
    for node in graph.iter() {
        if !node.t.is_root() {
            children.entry(node.parent).or_default().push(node.t);
        }
    }
    // depth-first with branch markers
    let mut stack: Vec<(Timestamp, usize)> = vec![(Timestamp::ROOT, 0)];
    while let Some((t, depth)) = stack.pop() {
        let node = graph.node(t).expect("listed node");
        let marker = if t == head { "*" } else { " " };
        let indent = "  ".repeat(depth);
        if t.is_root() {
            println!("{marker} {indent}root");
        } else {
            let summary: Vec<String> =
                node.delta.iter().map(|vcv| vcv.covar.to_string()).collect();
            let first_line = node.code.lines().next().unwrap_or("");
            let shown = if first_line.len() > 40 { &first_line[..40] } else { first_line };
            println!(
                "{marker} {indent}{}  [{}]  {}{}",
                t,
                summary.join(" "),
                shown,
                if node.code.lines().count() > 1 { " ..." } else { "" }
            );
        }
        if let Some(kids) = children.get(&t) {
            for kid in kids.iter().rev() {
                stack.push((*kid, depth + 1));
            }
        }
    }
}
