//! Command-line front end: validate scripts, render their graphs, run
//! them on a backend, and benchmark dispatch modes.
//!
//! Exit codes are part of the contract:
//!
//! | code | meaning                                      |
//! |------|----------------------------------------------|
//! | 0    | success (run reached quiescence)             |
//! | 1    | script rejected: syntax or type error        |
//! | 2    | script rejected: dependency cycle or unbound |
//! | 3    | run ended deadlocked                         |
//! | 4    | environment: bad flags, config, or files     |
//!
//! A run writes `runs/<run-id>/{events.jsonl, manifest.json,
//! artifacts.jsonl, artifacts/, tasks/}`; `MANYFLOW_RUN_ROOT` moves the
//! `runs/` prefix. Resume (`--resume ID`, local backend only) re-opens
//! the same directory, trusts published outputs, and appends this
//! session's events to the log.

use crate::dataflow::{instantiate, DataflowGraph, GraphError, Quiescence, TaskStatus};
use crate::datastore::{ArtifactRef, CdmHint};
use crate::dispatch::{EventSink, JsonlSink, RunEvent};
use crate::dsl::compile;
use crate::hash::{fnv1a, fnv1a_str};
use crate::simcluster::{run_local, run_simulated, ClusterConfig, LocalOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_LANG: i32 = 1;
pub const EXIT_GRAPH: i32 = 2;
pub const EXIT_DEADLOCK: i32 = 3;
pub const EXIT_ENV: i32 = 4;

#[derive(Parser)]
#[command(
    name = "manyflow",
    version,
    about = "many-task dataflow scripting engine",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, type-check, and expand a script without running it
    Validate { script: PathBuf },
    /// Run a script on the local process backend or the simulator
    Run(RunArgs),
    /// Print the expanded dataflow graph as DOT
    Graph { script: PathBuf },
    /// Benchmark central vs sharded dispatch on a synthetic workload
    Bench(BenchArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    Central,
    Sharded,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Central => "central",
            Mode::Sharded => "sharded",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    script: PathBuf,
    /// Run on the discrete-event cluster simulator
    #[arg(long, conflicts_with = "local")]
    sim: bool,
    /// Run as real processes on this machine (default)
    #[arg(long)]
    local: bool,
    #[arg(long, value_enum, default_value = "central")]
    mode: Mode,
    /// Dispatcher shard count (sharded mode; default 4)
    #[arg(long)]
    shards: Option<u32>,
    /// Local worker processes
    #[arg(long, default_value_t = 4)]
    workers: u32,
    /// Cluster config TOML (simulator geometry, retries, failures)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue an interrupted local run under this run id
    #[arg(long, value_name = "RUN_ID")]
    resume: Option<String>,
    /// Name the run directory instead of deriving an id
    #[arg(long, value_name = "RUN_ID", conflicts_with = "resume")]
    run_id: Option<String>,
    /// Also write the expanded graph as graph.dot in the run directory
    #[arg(long)]
    emit_graph: bool,
    /// Data-movement hint, e.g. broadcast=seed.dat:n0,n1,n2 (simulator only)
    #[arg(long = "hint", value_name = "PATTERN=ARTIFACT:TARGETS")]
    hints: Vec<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    Central,
    Sharded,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    /// fanout(N), pipeline(N), or diamond-mesh(W,D)
    workload: String,
    #[arg(long, value_enum, default_value = "both")]
    mode: BenchMode,
    #[arg(long, default_value_t = 4)]
    shards: u32,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Everything `manifest.json` records about a run.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub script: String,
    pub script_digest: String,
    pub config_digest: String,
    pub backend: String,
    pub mode: String,
    pub shards: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub workers: Option<u32>,
    /// completed | deadlocked | failed
    pub status: String,
    pub tasks_total: usize,
    /// Names of done tasks; a resumed run's set only grows.
    pub done_tasks: Vec<String>,
    pub metrics: serde_json::Value,
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ENV,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Cmd::Validate { script } => cmd_validate(&script),
        Cmd::Graph { script } => cmd_graph(&script),
        Cmd::Run(args) => cmd_run(&args),
        Cmd::Bench(args) => cmd_bench(&args),
    }
}

fn fail_env(msg: impl std::fmt::Display) -> i32 {
    eprintln!("manyflow: {msg}");
    EXIT_ENV
}

/// Parse + typecheck + expand; on failure prints diagnostics and returns
/// the exit code for the error's class.
fn load_graph(script: &Path) -> Result<(String, DataflowGraph), i32> {
    let source = match fs::read_to_string(script) {
        Ok(s) => s,
        Err(e) => return Err(fail_env(format_args!("{}: {e}", script.display()))),
    };
    let prog = match compile(&source) {
        Ok(p) => p,
        Err(diags) => {
            for d in &diags {
                eprintln!("{}: {d}", script.display());
            }
            return Err(EXIT_LANG);
        }
    };
    match instantiate(&prog, &BTreeMap::new()) {
        Ok(g) => Ok((source, g)),
        Err(e) => {
            eprintln!("{}: {e}", script.display());
            Err(graph_error_exit(&e))
        }
    }
}

fn graph_error_exit(e: &GraphError) -> i32 {
    match e {
        GraphError::Cycle { .. } | GraphError::UnboundInput { .. } => EXIT_GRAPH,
        _ => EXIT_LANG,
    }
}

fn cmd_validate(script: &Path) -> i32 {
    match load_graph(script) {
        Ok((_, g)) => {
            println!(
                "{}: ok ({} tasks, {} futures)",
                script.display(),
                g.task_count(),
                g.future_count()
            );
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn cmd_graph(script: &Path) -> i32 {
    match load_graph(script) {
        Ok((_, g)) => {
            print!("{}", render_dot(&g));
            EXIT_OK
        }
        Err(code) => code,
    }
}

/// Tasks as boxes, futures as ellipses, dashed lines where the artifact
/// is volatile. Node ids follow instantiation order, so output is stable.
fn render_dot(g: &DataflowGraph) -> String {
    use std::fmt::Write;
    let mut out = String::from("digraph manyflow {\n  rankdir=LR;\n");
    for cell in g.futures() {
        let style = if cell.volatile { ", style=dashed" } else { "" };
        writeln!(
            out,
            "  f{} [shape=ellipse, label=\"{}\"{}];",
            cell.id.0, cell.name, style
        )
        .unwrap();
    }
    for t in g.tasks() {
        writeln!(
            out,
            "  t{} [shape=box, label=\"{}\\n{}\"];",
            t.id.0, t.name, t.app
        )
        .unwrap();
    }
    for t in g.tasks() {
        let distinct: std::collections::BTreeSet<_> = t.inputs.iter().copied().collect();
        for f in distinct {
            let style = if g.future(f).volatile { " [style=dashed]" } else { "" };
            writeln!(out, "  f{} -> t{}{};", f.0, t.id.0, style).unwrap();
        }
        for &f in &t.outputs {
            let style = if g.future(f).volatile { " [style=dashed]" } else { "" };
            writeln!(out, "  t{} -> f{}{};", t.id.0, f.0, style).unwrap();
        }
    }
    out.push_str("}\n");
    out
}

fn cmd_run(args: &RunArgs) -> i32 {
    let backend = if args.sim { "sim" } else { "local" };
    if args.resume.is_some() && args.sim {
        return fail_env("--resume applies to local runs (a simulation re-runs from scratch)");
    }
    if !args.hints.is_empty() && !args.sim {
        return fail_env("data-movement hints steer the simulated store; use them with --sim");
    }
    if args.mode == Mode::Central && args.shards.is_some_and(|s| s > 1) {
        return fail_env("--shards above 1 needs --mode sharded");
    }
    let shards = match args.mode {
        Mode::Central => 1,
        Mode::Sharded => args.shards.unwrap_or(4),
    };
    if shards == 0 {
        return fail_env("--shards must be at least 1");
    }

    let mut hints = Vec::new();
    for h in &args.hints {
        match CdmHint::parse(h) {
            Ok(h) => hints.push(h),
            Err(e) => return fail_env(e),
        }
    }

    let (config_text, config) = match &args.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => match ClusterConfig::from_toml_str(&text) {
                Ok(cfg) => (text, cfg),
                Err(e) => return fail_env(format_args!("{}: {e}", path.display())),
            },
            Err(e) => return fail_env(format_args!("{}: {e}", path.display())),
        },
        None => {
            let cfg = ClusterConfig::default();
            (toml::to_string(&cfg).expect("config serializes"), cfg)
        }
    };

    let (source, graph) = match load_graph(&args.script) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let script_digest = fnv1a(source.as_bytes());
    let config_digest = fnv1a(config_text.as_bytes());

    let run_root = std::env::var_os("MANYFLOW_RUN_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let resume = args.resume.is_some();
    let run_id = args
        .resume
        .clone()
        .or_else(|| args.run_id.clone())
        .unwrap_or_else(|| {
            let stem = args
                .script
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            let key = format!(
                "{script_digest:016x}:{config_digest:016x}:{backend}:{}:{shards}",
                args.mode.as_str()
            );
            format!("{stem}-{:012x}", fnv1a_str(&key) & 0xffff_ffff_ffff)
        });
    let run_dir = run_root.join(&run_id);

    if resume {
        if !run_dir.is_dir() {
            return fail_env(format_args!(
                "nothing to resume: {} does not exist",
                run_dir.display()
            ));
        }
        // an interrupted run has no manifest yet; a finished one must
        // match the script we are about to continue
        if let Ok(text) = fs::read_to_string(run_dir.join("manifest.json")) {
            match serde_json::from_str::<RunManifest>(&text) {
                Ok(m) if m.script_digest != format!("{script_digest:016x}") => {
                    return fail_env("script changed since the original run; refusing to resume");
                }
                Ok(_) => {}
                Err(e) => return fail_env(format_args!("unreadable manifest: {e}")),
            }
        }
    } else if run_dir.join("manifest.json").is_file() {
        return fail_env(format_args!(
            "{} already holds a finished run; pass --resume {} or pick a --run-id",
            run_dir.display(),
            run_id
        ));
    }
    if let Err(e) = fs::create_dir_all(&run_dir) {
        return fail_env(format_args!("{}: {e}", run_dir.display()));
    }

    // bind external inputs to real files
    let (graph, seeds) = match bind_externals(graph, &source, &args.script, &run_dir) {
        Ok(x) => x,
        Err(code) => return code,
    };

    if args.emit_graph {
        if let Err(e) = fs::write(run_dir.join("graph.dot"), render_dot(&graph)) {
            return fail_env(format_args!("graph.dot: {e}"));
        }
    }

    let tasks_total = graph.task_count();
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        script: args.script.display().to_string(),
        script_digest: format!("{script_digest:016x}"),
        config_digest: format!("{config_digest:016x}"),
        backend: backend.into(),
        mode: args.mode.as_str().into(),
        shards,
        workers: (!args.sim).then_some(args.workers),
        status: "failed".into(),
        tasks_total,
        done_tasks: Vec::new(),
        metrics: serde_json::Value::Null,
    };

    let (verdict, graph, events_written) = if args.sim {
        match run_simulated(graph, &config, shards, &seeds, &hints, &run_id) {
            Ok(res) => {
                if let Err(e) = write_events(&run_dir, false, &res.events) {
                    return fail_env(e);
                }
                if let Err(e) = write_artifacts(&run_dir, res.store.artifacts()) {
                    return fail_env(e);
                }
                manifest.metrics = serde_json::to_value(&res.metrics).expect("metrics serialize");
                println!(
                    "{run_id}: simulated {} tasks, makespan {:.6} s, {:.0} tasks/s",
                    res.metrics.tasks_completed, res.metrics.makespan, res.metrics.throughput
                );
                (res.verdict, res.graph, true)
            }
            Err(e) => {
                let _ = write_manifest(&run_dir, &manifest);
                return fail_env(e);
            }
        }
    } else {
        let opts = LocalOptions {
            workers: args.workers,
            shards,
            max_retries: config.max_retries,
            run_root: run_dir.clone(),
            run_id: run_id.clone(),
            exe_dir: None,
            resume,
        };
        let file = match fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(run_dir.join("events.jsonl"))
        {
            Ok(f) => f,
            Err(e) => return fail_env(format_args!("events.jsonl: {e}")),
        };
        let mut sink = JsonlSink::new(file);
        match run_local(graph, &seeds, &opts, &mut sink) {
            Ok(out) => {
                if let Err(e) = sink.finish() {
                    return fail_env(format_args!("events.jsonl: {e}"));
                }
                if let Err(e) = write_artifacts(&run_dir, out.artifacts.iter()) {
                    return fail_env(e);
                }
                manifest.metrics = serde_json::json!({
                    "wall_seconds": out.wall_seconds,
                    "tasks_completed": out.tasks_completed,
                    "tasks_preloaded": out.preloaded,
                    "throughput": if out.wall_seconds > 0.0 {
                        out.tasks_completed as f64 / out.wall_seconds
                    } else {
                        0.0
                    },
                });
                println!(
                    "{run_id}: ran {} tasks ({} reused) in {:.3} s",
                    out.tasks_completed, out.preloaded, out.wall_seconds
                );
                (out.verdict, out.graph, true)
            }
            Err(e) => {
                let _ = sink.finish();
                let _ = write_manifest(&run_dir, &manifest);
                return fail_env(e);
            }
        }
    };
    debug_assert!(events_written);

    manifest.done_tasks = graph
        .tasks()
        .filter(|t| matches!(graph.status(t.id), Ok(TaskStatus::Done)))
        .map(|t| t.name.clone())
        .collect();
    match &verdict {
        Quiescence::Quiescent => manifest.status = "completed".into(),
        Quiescence::Deadlocked(stuck) => {
            manifest.status = "deadlocked".into();
            eprintln!("{run_id}: deadlocked; unset futures:");
            for s in stuck {
                eprintln!("  {}", s.name);
            }
        }
    }
    if let Err(e) = write_manifest(&run_dir, &manifest) {
        return fail_env(e);
    }

    match verdict {
        Quiescence::Quiescent => EXIT_OK,
        Quiescence::Deadlocked(_) => EXIT_DEADLOCK,
    }
}

/// Replace placeholder bindings (externals the script only names) with
/// refs to real files, and collect their bytes for store seeding. Files
/// resolve against the run's `artifacts/` dir first (a resumed run owns
/// its inputs), then the working directory, then the script's directory.
fn bind_externals(
    graph: DataflowGraph,
    source: &str,
    script: &Path,
    run_dir: &Path,
) -> Result<(DataflowGraph, BTreeMap<String, Vec<u8>>), i32> {
    let mut bindings = BTreeMap::new();
    let mut seeds = BTreeMap::new();
    for (cell, aref) in graph.external_bindings() {
        if aref.digest != 0 || aref.size != 0 {
            continue; // already a real ref
        }
        let mut candidates = vec![run_dir.join("artifacts").join(&aref.name)];
        candidates.push(PathBuf::from(&aref.name));
        if let Some(dir) = script.parent() {
            candidates.push(dir.join(&aref.name));
        }
        let Some(found) = candidates.iter().find(|p| p.is_file()) else {
            return Err(fail_env(format_args!(
                "input file `{}` (external `{}`) not found; looked in {}",
                aref.name,
                cell.name,
                candidates
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        };
        let bytes = match fs::read(found) {
            Ok(b) => b,
            Err(e) => return Err(fail_env(format_args!("{}: {e}", found.display()))),
        };
        bindings.insert(
            cell.name.clone(),
            ArtifactRef {
                name: aref.name.clone(),
                size: bytes.len() as u64,
                digest: fnv1a(&bytes),
                persistence: aref.persistence,
                // seeds live on the shared fs once the run starts; the
                // simulator's store tracks its own copies regardless
                locations: std::iter::once(crate::datastore::Location::SharedFs).collect(),
            },
        );
        seeds.insert(aref.name.clone(), bytes);
    }
    if bindings.is_empty() {
        return Ok((graph, seeds));
    }
    // re-expand with the real refs in place of placeholders
    let prog = compile(source).expect("validated above");
    match instantiate(&prog, &bindings) {
        Ok(g) => Ok((g, seeds)),
        Err(e) => {
            eprintln!("{e}");
            Err(graph_error_exit(&e))
        }
    }
}

fn write_events(run_dir: &Path, append: bool, events: &[RunEvent]) -> Result<(), String> {
    let mut opts = fs::OpenOptions::new();
    if append {
        opts.create(true).append(true);
    } else {
        opts.create(true).write(true).truncate(true);
    }
    let file = opts
        .open(run_dir.join("events.jsonl"))
        .map_err(|e| format!("events.jsonl: {e}"))?;
    let mut sink = JsonlSink::new(file);
    for ev in events {
        sink.emit(ev.clone());
    }
    sink.finish().map_err(|e| format!("events.jsonl: {e}"))
}

fn write_artifacts<'a>(
    run_dir: &Path,
    artifacts: impl Iterator<Item = &'a ArtifactRef>,
) -> Result<(), String> {
    let mut text = String::new();
    for a in artifacts {
        text.push_str(&a.to_json().to_string());
        text.push('\n');
    }
    fs::write(run_dir.join("artifacts.jsonl"), text).map_err(|e| format!("artifacts.jsonl: {e}"))
}

fn write_manifest(run_dir: &Path, m: &RunManifest) -> Result<(), String> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(run_dir.join("manifest.json"), text).map_err(|e| format!("manifest.json: {e}"))
}

fn cmd_bench(args: &BenchArgs) -> i32 {
    let config = match &args.config {
        Some(path) => match ClusterConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => return fail_env(e),
        },
        None => ClusterConfig {
            // benches exist to show the dispatch bottleneck; give it one
            dispatch_latency: 0.001,
            ..ClusterConfig::default()
        },
    };
    if args.shards == 0 {
        return fail_env("--shards must be at least 1");
    }
    let build = match parse_workload(&args.workload) {
        Ok(b) => b,
        Err(e) => return fail_env(e),
    };

    let mut report = serde_json::Map::new();
    report.insert("workload".into(), args.workload.clone().into());
    report.insert(
        "dispatch_latency".into(),
        serde_json::json!(config.dispatch_latency),
    );
    let mut measured = Vec::new();
    for (label, shards) in [("central", 1), ("sharded", args.shards)] {
        let wanted = match args.mode {
            BenchMode::Central => label == "central",
            BenchMode::Sharded => label == "sharded",
            BenchMode::Both => true,
        };
        if !wanted {
            continue;
        }
        let wl = build();
        let seeds: BTreeMap<String, Vec<u8>> = wl.seeds.iter().cloned().collect();
        match run_simulated(wl.graph, &config, shards, &seeds, &[], "bench") {
            Ok(res) => {
                if res.verdict != Quiescence::Quiescent {
                    return fail_env(format_args!("{label} benchmark deadlocked"));
                }
                let mut m = serde_json::to_value(&res.metrics).expect("metrics serialize");
                m.as_object_mut()
                    .unwrap()
                    .insert("shards".into(), shards.into());
                measured.push((label, res.metrics.throughput));
                report.insert(label.into(), m);
            }
            Err(e) => return fail_env(e),
        }
    }
    if let [(_, central), (_, sharded)] = measured[..] {
        if central > 0.0 {
            report.insert("speedup".into(), serde_json::json!(sharded / central));
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Object(report)).unwrap()
    );
    EXIT_OK
}

type WorkloadBuilder = Box<dyn Fn() -> crate::dataflow::workloads::Workload>;

fn parse_workload(text: &str) -> Result<WorkloadBuilder, String> {
    use crate::dataflow::workloads;
    let err = || format!("unknown workload `{text}` (fanout(N), pipeline(N), diamond-mesh(W,D))");
    let (name, rest) = text.split_once('(').ok_or_else(err)?;
    let inner = rest.strip_suffix(')').ok_or_else(err)?;
    let nums: Vec<u32> = inner
        .split(',')
        .map(|s| s.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| err())?;
    if nums.contains(&0) {
        return Err(err());
    }
    match (name.trim(), nums.as_slice()) {
        ("fanout", &[n]) => Ok(Box::new(move || workloads::fanout(n))),
        ("pipeline", &[n]) => Ok(Box::new(move || workloads::pipeline(n))),
        ("diamond-mesh" | "diamond_mesh", &[w, d]) => {
            Ok(Box::new(move || workloads::diamond_mesh(w, d)))
        }
        _ => Err(err()),
    }
}
