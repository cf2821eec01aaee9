//! Command-line entry points. Exit status: 0 clean, 2 scenario events or
//! inconsistencies found, 1 error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{load_config, ConfigError, ScenarioConfig, SCHEMA};
use crate::controller::search::{constraints_at, derive_windows};
use crate::monitor::{classify, Verdict};
use crate::plant::PlanningView;
use crate::process::check_arrow5;
use crate::scenario::{Scenario, Stage, StageKind};
use crate::sim::{observe, run_episode};
use crate::trace::{read_trace, write_trace, Trace};
use crate::window::Interval;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_EVENTS: i32 = 2;

/// Environment variable naming the default output directory of `run`.
pub const OUT_DIR_ENV: &str = "STPA_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";
const ARROW5_SAMPLES: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "stpa-plus", version, about = "Scenario runner and monitor for three-decision controllers")]
struct Cli {
    /// Print the JSON Schema of the config format and exit.
    #[arg(long)]
    schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run episodes and write a trace, verdict and summary per seed.
    Run {
        config: PathBuf,
        /// Seed for a single episode; defaults to the config's seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Seed range `A..B` (end exclusive) or `A..=B`.
        #[arg(long)]
        seeds: Option<SeedRange>,
        /// Output directory; defaults to $STPA_OUT_DIR or ./out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a config, sample descriptive consistency and preview the
    /// windows at tick 0.
    Check { config: PathBuf },
    /// Re-derive scenario events from a recorded trace.
    Monitor { trace: PathBuf, config: PathBuf },
    /// Summarize a recorded trace.
    Report { trace: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRange(pub Range<u64>);

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected A..B or A..=B, got {s:?}");
        let (a, b, inclusive) = match s.split_once("..=") {
            Some((a, b)) => (a, b, true),
            None => {
                let (a, b) = s.split_once("..").ok_or_else(bad)?;
                (a, b, false)
            }
        };
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        let end = if inclusive { b.checked_add(1).ok_or_else(bad)? } else { b };
        if end <= a {
            return Err(format!("seed range {s:?} is empty"));
        }
        Ok(SeedRange(a..end))
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}:\n{source}")]
    Config { path: String, source: ConfigError },
    #[error("{path}: {source}")]
    Trace {
        path: String,
        source: crate::trace::TraceError,
    },
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Resolves `name` to a config file, trying `name.toml` and
/// `configs/name.toml` when the path does not exist.
fn resolve_config(path: &Path) -> PathBuf {
    if path.exists() || path.extension().is_some() {
        return path.to_path_buf();
    }
    let file = path.with_extension("toml");
    let candidates = [file.clone(), Path::new("configs").join(&file)];
    candidates.into_iter().find(|p| p.exists()).unwrap_or_else(|| path.to_path_buf())
}

fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let path = resolve_config(path);
    load_config(&path).map_err(|source| CliError::Config {
        path: path.display().to_string(),
        source,
    })
}

fn load_trace(path: &Path) -> Result<Trace, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_trace(BufReader::new(file)).map_err(|source| CliError::Trace {
        path: path.display().to_string(),
        source,
    })
}

fn build_err(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

/// Runs the command line `args` (program name first).
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_CLEAN
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_ERROR
                }
            };
        }
    };
    if cli.schema {
        let _ = writeln!(out, "{}", SCHEMA.trim_end());
        return EXIT_CLEAN;
    }
    let Some(command) = cli.command else {
        use clap::CommandFactory;
        let _ = write!(err, "{}", Cli::command().render_usage());
        let _ = writeln!(err);
        return EXIT_ERROR;
    };
    let result = match command {
        Command::Run {
            config,
            seed,
            seeds,
            out: dir,
        } => cmd_run(&config, seed, seeds, dir, out),
        Command::Check { config } => cmd_check(&config, out),
        Command::Monitor { trace, config } => cmd_monitor(&trace, &config, out),
        Command::Report { trace } => cmd_report(&trace, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Outcome of one episode of `run`.
struct RunOutcome {
    seed: u64,
    dir: PathBuf,
    summary: String,
    code: i32,
}

fn run_one(config: &ScenarioConfig, seed: u64, dir: &Path) -> Result<RunOutcome, CliError> {
    let spec = config.instantiate(seed).map_err(build_err)?;
    let trace = run_episode(&spec).map_err(build_err)?;
    let verdict = classify(&trace, spec.plant.clone(), spec.model.clone(), spec.controller.clone()).map_err(build_err)?;
    let emitted: Vec<_> = trace.records.iter().flat_map(|r| r.decision.events.iter().map(|e| e.key())).collect();
    let emitted: std::collections::BTreeSet<_> = emitted.into_iter().collect();
    if emitted != verdict.event_keys() {
        return Err(CliError::Other(format!(
            "seed {seed}: monitor and controller disagree on the scenario events"
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let trace_path = dir.join("trace.jsonl");
    let file = fs::File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    write_trace(&trace, std::io::BufWriter::new(file)).map_err(|source| CliError::Trace {
        path: trace_path.display().to_string(),
        source,
    })?;
    let verdict_path = dir.join("verdict.tsv");
    fs::write(&verdict_path, verdict.to_string()).map_err(|e| io_err(&verdict_path, e))?;
    let summary = summarize(&trace);
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, &summary).map_err(|e| io_err(&summary_path, e))?;
    let violations = trace.footer.as_ref().map_or(0, |f| f.summary.pc_violations.len());
    let code = if verdict.is_empty() && violations == 0 {
        EXIT_CLEAN
    } else {
        EXIT_EVENTS
    };
    Ok(RunOutcome {
        seed,
        dir: dir.to_path_buf(),
        summary: format!("{summary}{verdict}"),
        code,
    })
}

fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    seeds: Option<SeedRange>,
    out_dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let config = load(path)?;
    let root = out_dir
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
        .join(&config.run.name);
    let seeds: Vec<u64> = match seeds {
        Some(SeedRange(r)) => r.collect(),
        None => vec![seed.unwrap_or(config.run.seed)],
    };
    let dir_of = |s: u64| root.join(format!("seed-{s}"));
    let outcomes: Vec<Result<RunOutcome, CliError>> = if seeds.len() == 1 {
        vec![run_one(&config, seeds[0], &dir_of(seeds[0]))]
    } else {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
        let chunks: Vec<Vec<u64>> = (0..workers)
            .map(|w| seeds.iter().copied().skip(w).step_by(workers).collect())
            .collect();
        let mut results: BTreeMap<u64, Result<RunOutcome, CliError>> = BTreeMap::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| {
                    let config = &config;
                    let dir_of = &dir_of;
                    scope.spawn(move || chunk.iter().map(|&s| (s, run_one(config, s, &dir_of(s)))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                results.extend(h.join().expect("episode worker panicked"));
            }
        });
        results.into_values().collect()
    };
    let mut code = EXIT_CLEAN;
    let mut errors = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                let _ = writeln!(out, "== seed {} -> {}", o.seed, o.dir.display());
                let _ = write!(out, "{}", o.summary);
                code = code.max(o.code);
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Other(errors.join("\n")));
    }
    Ok(code)
}

fn cmd_check(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let config = load(path)?;
    let spec = config.instantiate(config.run.seed).map_err(build_err)?;
    let snap = spec.world.snapshot();
    let dcs = constraints_at(&spec.model, &snap).map_err(build_err)?;
    let _ = writeln!(out, "config {}: ok ({} plant, {} pairs)", config.run.name, config.plant.kind(), config.pairs.len());
    let _ = writeln!(out, "active pairs: {}", dcs.active.join(", "));
    for ex in &dcs.excluded {
        let _ = writeln!(out, "excluded pair: {} ({})", ex.id, ex.failed);
    }
    for (element, set) in &dcs.sets {
        let _ = writeln!(out, "constraint {element}: {set}");
    }
    let report = check_arrow5(&spec.model, &dcs, ARROW5_SAMPLES, config.run.seed);
    let _ = write!(out, "{report}");

    let dt = config.dt();
    let obs = observe(&spec.world, &spec.visibility, dt);
    let lead = spec.controller.delays.lead().max(0) as usize;
    let committed = vec![spec.plant.idle_control(); lead];
    let hi = spec.controller.planning_ticks.min(spec.ticks).max(1);
    let horizon = Interval::new(0, hi).map_err(build_err)?;
    let view = PlanningView {
        snapshot: &obs,
        dcs: &dcs,
        committed: &committed,
        continuation: None,
        horizon,
    };
    let pcs = derive_windows(&*spec.plant, &view, spec.controller.margin);
    let w = &pcs.windows;
    let _ = writeln!(out, "windows at tick 0 over {horizon}:");
    for (name, set) in [
        ("mst", &w.mst),
        ("nst", &w.nst),
        ("cst", &w.cst),
        ("msp", &w.msp),
        ("nsp", &w.nsp),
        ("csp", &w.csp),
        ("ST", &w.st),
        ("SP", &w.sp),
    ] {
        let _ = writeln!(out, "  {name}\t{set}");
    }
    if pcs.conflict {
        let _ = writeln!(out, "  conflict: the must-start window is unreachable");
    }
    Ok(if report.is_consistent() && !pcs.conflict {
        EXIT_CLEAN
    } else {
        EXIT_EVENTS
    })
}

fn monitor_verdict(trace: &Trace, config: &ScenarioConfig) -> Result<Verdict, CliError> {
    let plant = config.build_plant().map_err(build_err)?;
    let model = config.build_model(&*plant).map_err(build_err)?;
    let cfg = config.controller_config().map_err(build_err)?;
    classify(trace, plant, model, cfg).map_err(build_err)
}

fn cmd_monitor(trace_path: &Path, config_path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let trace = load_trace(trace_path)?;
    let config = load(config_path)?;
    if trace.header.config_digest != config.digest() {
        return Err(CliError::Other(format!(
            "trace was recorded from a different config (digest {} vs {})",
            trace.header.config_digest,
            config.digest()
        )));
    }
    let verdict = monitor_verdict(&trace, &config)?;
    let _ = write!(out, "{verdict}");
    Ok(if verdict.is_empty() { EXIT_CLEAN } else { EXIT_EVENTS })
}

/// Header lines, outcome and the per-stage scenario table.
pub fn summarize(trace: &Trace) -> String {
    let h = &trace.header;
    let mut s = String::new();
    let _ = writeln!(s, "scenario\t{}", h.name);
    let _ = writeln!(s, "seed\t{}", h.seed);
    let _ = writeln!(s, "plant\t{}", h.plant);
    let _ = writeln!(s, "strategy\t{:?}", h.strategy);
    let _ = writeln!(s, "ticks\t{} of {}", trace.records.len(), h.ticks);
    match &trace.footer {
        Some(f) => {
            let m = &f.summary;
            let _ = writeln!(s, "terminal\t{:?}", m.terminal);
            let _ = writeln!(s, "final_mode\t{:?}", m.final_mode);
            let _ = writeln!(s, "final_state\t{:?}", m.final_state);
            let _ = writeln!(s, "pc_violations\t{}", m.pc_violations.len());
            if let Some(v) = m.pc_violations.first() {
                let _ = writeln!(s, "first_pc_violation\t{}\t{}", v.tick, v.clause);
            }
            let _ = writeln!(s, "saturations\t{}", m.saturations);
            if let Some(fb) = &m.fallback {
                let _ = writeln!(
                    s,
                    "fallback\ttick {}\tneeded {:.3}\tavailable {:.3}\t{}",
                    fb.tick,
                    fb.needed,
                    fb.available,
                    if fb.allowed { "ok" } else { "short" }
                );
            }
        }
        None => {
            let _ = writeln!(s, "terminal\tunfinished");
        }
    }
    let mut counts: BTreeMap<Scenario, usize> = BTreeMap::new();
    for r in &trace.records {
        for e in &r.decision.events {
            *counts.entry(e.scenario).or_default() += 1;
        }
    }
    let kinds = [
        StageKind::NoDecision,
        StageKind::PreviouslySafe,
        StageKind::UnsafeTiming,
        StageKind::TimeCoupling,
    ];
    let _ = write!(s, "stage");
    for k in kinds {
        let _ = write!(s, "\t{k}");
    }
    let _ = writeln!(s);
    for stage in [Stage::D1, Stage::D2, Stage::D3] {
        let _ = write!(s, "{stage}");
        for k in kinds {
            match Scenario::new(stage, k) {
                Some(sc) => {
                    let _ = write!(s, "\t{}", counts.get(&sc).copied().unwrap_or(0));
                }
                None => {
                    let _ = write!(s, "\t-");
                }
            }
        }
        let _ = writeln!(s);
    }
    s
}

fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let trace = load_trace(path)?;
    let _ = write!(out, "{}", summarize(&trace));
    let events = trace.records.iter().any(|r| !r.decision.events.is_empty());
    let violations = trace.footer.as_ref().is_some_and(|f| !f.summary.pc_violations.is_empty());
    Ok(if events || violations { EXIT_EVENTS } else { EXIT_CLEAN })
}
