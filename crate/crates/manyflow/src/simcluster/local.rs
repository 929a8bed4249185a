//! Local execution: real processes, private task directories, artifacts
//! on a shared filesystem under the run root.
//!
//! Layout under `run_root`:
//!
//! ```text
//! artifacts/<artifact-name>     finished outputs and seeded inputs
//! tasks/<task-id>/              per-task scratch, wiped on each attempt
//! tasks/<task-id>/stdout.txt    captured streams
//! ```
//!
//! Inputs are hardlinked (copied if linking fails) into the task directory,
//! outputs written there and renamed into `artifacts/` on success — rename
//! is atomic, so an artifact file's existence means it is complete. That
//! property is what makes `resume` safe: any task whose outputs all exist
//! is marked done without re-running.
//!
//! Tasks whose program is `noop` are short-circuited in-process (their
//! outputs are empty by definition); they exist to measure engine overhead
//! and would otherwise measure `fork`/`exec` instead.

use super::SimError;
use crate::dataflow::{DataflowGraph, FutureId, GraphError, Quiescence, TaskId};
use crate::datastore::{content_digest, ArtifactRef, Location, Persistence};
use crate::dispatch::{
    DispatchPolicy, Engine, EventSink, FailureOutcome, Launch, Poll, RunEvent, ShardPlan, TeeSink,
    WorkerPool,
};
use crate::dispatch::output_artifact_name;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct LocalOptions {
    /// Worker slots; also the size of the single-slot node pool.
    pub workers: u32,
    pub shards: u32,
    pub max_retries: u32,
    /// Run directory (created if missing).
    pub run_root: PathBuf,
    pub run_id: String,
    /// Where stub programs live. Defaults to the directory of the current
    /// executable (and its parent, which covers `target/debug/deps`).
    pub exe_dir: Option<PathBuf>,
    /// Mark tasks whose outputs already exist under `artifacts/` as done
    /// instead of re-running them.
    pub resume: bool,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions {
            workers: 4,
            shards: 1,
            max_retries: 3,
            run_root: PathBuf::from("runs/local"),
            run_id: "local".into(),
            exe_dir: None,
            resume: false,
        }
    }
}

pub struct LocalOutcome {
    pub graph: DataflowGraph,
    pub events: Vec<RunEvent>,
    pub verdict: Quiescence,
    /// Tasks completed by this session.
    pub tasks_completed: u64,
    /// Tasks inherited as done from a previous session (resume only).
    pub preloaded: u64,
    pub wall_seconds: f64,
    /// Every artifact with a value at the end, sorted by name.
    pub artifacts: Vec<ArtifactRef>,
}

#[derive(Debug, thiserror::Error)]
pub enum LocalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no content for external artifact `{name}` — seed it or place it under artifacts/")]
    MissingSeed { name: String },
    #[error("a worker thread died")]
    WorkerDied,
}

impl From<LocalError> for SimError {
    fn from(e: LocalError) -> Self {
        match e {
            LocalError::Graph(g) => SimError::Graph(g),
            other => SimError::Config {
                message: other.to_string(),
            },
        }
    }
}

struct OutputSpec {
    future: FutureId,
    /// Path written by the command, relative to the task dir.
    local: String,
    /// Final artifact location under `artifacts/`.
    publish: PathBuf,
    name: String,
    persistence: Persistence,
}

struct WorkItem {
    task: TaskId,
    argv: Vec<String>,
    program: PathBuf,
    task_dir: PathBuf,
    /// (artifact file, task-local relative path) per distinct input.
    stage: Vec<(PathBuf, String)>,
    outputs: Vec<OutputSpec>,
    fast_noop: bool,
}

struct WorkDone {
    task: TaskId,
    result: Result<Vec<(FutureId, ArtifactRef)>, String>,
}

fn basename(name: &str) -> &str {
    name.rsplit('/').next().unwrap_or(name)
}

fn write_atomic(path: &Path, content: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp-manyflow");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)
}

fn link_or_copy(src: &Path, dst: &Path) -> std::io::Result<()> {
    if std::fs::hard_link(src, dst).is_ok() {
        return Ok(());
    }
    std::fs::copy(src, dst).map(|_| ())
}

/// Execute one prepared task. Runs on a worker thread; touches only the
/// task directory and (atomically) the artifact files it publishes.
fn execute(item: &WorkItem) -> Result<Vec<(FutureId, ArtifactRef)>, String> {
    if item.fast_noop {
        return item
            .outputs
            .iter()
            .map(|o| {
                write_atomic(&o.publish, b"")
                    .map_err(|e| format!("{}: {e}", o.publish.display()))?;
                Ok((o.future, artifact_ref(o, b"")))
            })
            .collect();
    }

    // fresh scratch per attempt
    if item.task_dir.exists() {
        std::fs::remove_dir_all(&item.task_dir).map_err(|e| format!("clearing task dir: {e}"))?;
    }
    std::fs::create_dir_all(&item.task_dir).map_err(|e| format!("creating task dir: {e}"))?;

    for (src, local) in &item.stage {
        let dst = item.task_dir.join(local);
        link_or_copy(src, &dst)
            .map_err(|e| format!("staging {} -> {local}: {e}", src.display()))?;
    }

    let stdout = std::fs::File::create(item.task_dir.join("stdout.txt"))
        .map_err(|e| format!("stdout capture: {e}"))?;
    let stderr = std::fs::File::create(item.task_dir.join("stderr.txt"))
        .map_err(|e| format!("stderr capture: {e}"))?;
    let status = std::process::Command::new(&item.program)
        .args(&item.argv[1..])
        .current_dir(&item.task_dir)
        .stdout(stdout)
        .stderr(stderr)
        .status()
        .map_err(|e| format!("spawning {}: {e}", item.program.display()))?;
    if !status.success() {
        return Err(format!("{} exited with {status}", item.argv[0]));
    }

    let mut outs = Vec::with_capacity(item.outputs.len());
    for o in &item.outputs {
        let produced = item.task_dir.join(&o.local);
        let content = std::fs::read(&produced)
            .map_err(|_| format!("declared output `{}` was not produced", o.name))?;
        if let Ok(existing) = std::fs::read(&o.publish) {
            // a re-run may only reproduce what is already published
            if content_digest(&existing) != content_digest(&content) {
                return Err(format!("re-run of `{}` produced different bytes", o.name));
            }
        } else {
            write_atomic(&o.publish, &content)
                .map_err(|e| format!("publishing `{}`: {e}", o.name))?;
        }
        outs.push((o.future, artifact_ref(o, &content)));
    }
    Ok(outs)
}

fn artifact_ref(o: &OutputSpec, content: &[u8]) -> ArtifactRef {
    ArtifactRef {
        name: o.name.clone(),
        size: content.len() as u64,
        digest: content_digest(content),
        persistence: o.persistence,
        locations: BTreeSet::from([Location::SharedFs]),
    }
}

fn resolve_program(word: &str, exe_dir: &Option<PathBuf>) -> PathBuf {
    if word.contains('/') {
        return PathBuf::from(word);
    }
    let mut candidates = Vec::new();
    if let Some(dir) = exe_dir {
        candidates.push(dir.clone());
        if let Some(parent) = dir.parent() {
            candidates.push(parent.to_path_buf());
        }
    } else if let Ok(exe) = std::env::current_exe() {
        if let Some(dir) = exe.parent() {
            candidates.push(dir.to_path_buf());
            if let Some(parent) = dir.parent() {
                candidates.push(parent.to_path_buf());
            }
        }
    }
    for dir in candidates {
        let p = dir.join(word);
        if p.is_file() {
            return p;
        }
    }
    PathBuf::from(word) // fall back to $PATH
}

fn prepare(
    engine: &Engine,
    l: &Launch,
    run_root: &Path,
    run_id: &str,
    exe_dir: &Option<PathBuf>,
) -> Result<WorkItem, GraphError> {
    let graph = engine.graph();
    let spec = graph.task(l.task)?;
    let artifacts_dir = run_root.join("artifacts");
    let task_dir = run_root.join("tasks").join(l.task.to_string());

    let distinct: BTreeSet<FutureId> = spec.inputs.iter().copied().collect();
    let mut stage = Vec::new();
    let mut staged_path: BTreeMap<FutureId, String> = BTreeMap::new();
    for f in distinct {
        let name = graph
            .future(f)
            .value
            .as_ref()
            .and_then(|v| v.as_artifact())
            .map(|a| a.name.clone())
            .expect("ready task has set inputs");
        let local = format!("in_f{}_{}", f.0, basename(&name));
        stage.push((artifacts_dir.join(&name), local.clone()));
        staged_path.insert(f, local);
    }

    let mut outputs = Vec::with_capacity(spec.outputs.len());
    for (i, f) in spec.outputs.iter().enumerate() {
        let name = output_artifact_name(graph, l.task, i, run_id);
        outputs.push(OutputSpec {
            future: *f,
            local: format!("out_{i}_{}", basename(&name)),
            publish: artifacts_dir.join(&name),
            name,
            persistence: if graph.future(*f).volatile {
                Persistence::Volatile
            } else {
                Persistence::Persistent
            },
        });
    }

    let argv = spec.resolve_command(
        |_, f| staged_path[&f].clone(),
        |i, _| outputs[i].local.clone(),
    );
    let fast_noop = spec.program() == Some("noop");
    let program = resolve_program(argv.first().map(String::as_str).unwrap_or("noop"), exe_dir);
    Ok(WorkItem {
        task: l.task,
        argv,
        program,
        task_dir,
        stage,
        outputs,
        fast_noop,
    })
}

/// Mark every task whose outputs already exist under `artifacts/` as done,
/// repeating until no more tasks qualify. Returns delivery notices for the
/// inherited futures so this session's log stays checkable.
fn preload_done(
    graph: &mut DataflowGraph,
    artifacts_dir: &Path,
    run_id: &str,
    plan: &ShardPlan,
) -> Result<(u64, Vec<(String, u32)>), GraphError> {
    let mut preloaded = 0;
    let mut deliveries: BTreeSet<(String, u32)> = BTreeSet::new();
    loop {
        let mut advanced = false;
        for t in graph.ready_tasks() {
            let spec = graph.task(t)?;
            let n_outputs = spec.outputs.len();
            let mut refs = BTreeMap::new();
            for i in 0..n_outputs {
                let name = output_artifact_name(graph, t, i, run_id);
                let Ok(content) = std::fs::read(artifacts_dir.join(&name)) else {
                    refs.clear();
                    break;
                };
                let spec = graph.task(t)?;
                let f = spec.outputs[i];
                refs.insert(
                    f,
                    ArtifactRef {
                        name,
                        size: content.len() as u64,
                        digest: content_digest(&content),
                        persistence: if graph.future(f).volatile {
                            Persistence::Volatile
                        } else {
                            Persistence::Persistent
                        },
                        locations: BTreeSet::from([Location::SharedFs]),
                    },
                );
            }
            if refs.len() != n_outputs {
                continue;
            }
            graph.start_task(t)?;
            graph.complete_task(t, &refs)?;
            preloaded += 1;
            advanced = true;
            let spec = graph.task(t)?;
            for f in spec.outputs.clone() {
                let cell = graph.future(f);
                for consumer in cell.consumers.clone() {
                    deliveries.insert((cell.name.clone(), plan.owner(consumer)));
                }
            }
        }
        if !advanced {
            break;
        }
    }
    Ok((preloaded, deliveries.into_iter().collect()))
}

/// Run `graph` with real processes under `opts.run_root`, streaming events
/// into `sink` as they happen.
pub fn run_local<S: EventSink>(
    mut graph: DataflowGraph,
    seeds: &BTreeMap<String, Vec<u8>>,
    opts: &LocalOptions,
    sink: &mut S,
) -> Result<LocalOutcome, LocalError> {
    let started = Instant::now();
    let artifacts_dir = opts.run_root.join("artifacts");
    std::fs::create_dir_all(&artifacts_dir)?;
    std::fs::create_dir_all(opts.run_root.join("tasks"))?;

    // external inputs become artifact files before anything runs
    for (_, aref) in graph.external_bindings() {
        let path = artifacts_dir.join(&aref.name);
        if path.is_file() {
            continue;
        }
        let Some(content) = seeds.get(&aref.name) else {
            return Err(LocalError::MissingSeed {
                name: aref.name.clone(),
            });
        };
        write_atomic(&path, content)?;
    }

    let plan = ShardPlan::new(opts.shards);
    let mut tee = TeeSink::new(sink);
    let mut preloaded = 0;
    if opts.resume {
        let (count, deliveries) = preload_done(&mut graph, &artifacts_dir, &opts.run_id, &plan)?;
        preloaded = count;
        for (name, shard) in deliveries {
            tee.emit(RunEvent::future_set(0.0, &name, shard));
        }
    }
    let pending: Vec<TaskId> = graph
        .tasks()
        .filter(|t| graph.status(t.id).unwrap() != crate::dataflow::TaskStatus::Done)
        .map(|t| t.id)
        .collect();

    let policy = DispatchPolicy {
        max_retries: opts.max_retries,
    };
    let pool = WorkerPool::new(opts.workers.max(1));
    let (mut engine, initial) = Engine::new(graph, pool, plan, policy);
    let ts = |start: &Instant| start.elapsed().as_secs_f64();

    for t in pending {
        tee.emit(RunEvent::submit(ts(&started), t));
    }
    for q in initial {
        tee.emit(RunEvent::ready(ts(&started), q.task, q.shard));
    }

    let (work_tx, work_rx) = mpsc::channel::<WorkItem>();
    let work_rx = Arc::new(Mutex::new(work_rx));
    let (done_tx, done_rx) = mpsc::channel::<WorkDone>();
    let threads: Vec<_> = (0..opts.workers.max(1))
        .map(|_| {
            let rx = Arc::clone(&work_rx);
            let tx = done_tx.clone();
            std::thread::spawn(move || loop {
                let item = match rx.lock().expect("queue lock").recv() {
                    Ok(item) => item,
                    Err(_) => break,
                };
                let result = execute(&item);
                if let Err(reason) = &result {
                    let _ = write_atomic(&item.task_dir.join("error.txt"), reason.as_bytes());
                }
                if tx.send(WorkDone {
                    task: item.task,
                    result,
                })
                .is_err()
                {
                    break;
                }
            })
        })
        .collect();
    drop(done_tx);

    let mut in_flight = 0usize;
    let mut completed = 0u64;
    let run_result: Result<(), LocalError> = (|| {
        loop {
            // issue every launchable task before blocking on completions
            loop {
                let mut progressed = false;
                for shard in 0..plan.shards() {
                    loop {
                        match engine.poll_launch(shard) {
                            Poll::Idle => break,
                            Poll::ConfigFail { task, .. } => {
                                let attempt = engine.attempt(task);
                                tee.emit(RunEvent::fail_task(ts(&started), task, attempt));
                                progressed = true;
                            }
                            Poll::Launch(l) => {
                                for n in &l.nodes {
                                    tee.emit(RunEvent::alloc(
                                        ts(&started),
                                        l.task,
                                        *n,
                                        l.shard,
                                        l.attempt,
                                    ));
                                }
                                tee.emit(RunEvent::start(
                                    ts(&started),
                                    l.task,
                                    l.nodes[0],
                                    l.shard,
                                    l.attempt,
                                ));
                                let item =
                                    prepare(&engine, &l, &opts.run_root, &opts.run_id, &opts.exe_dir)?;
                                work_tx.send(item).map_err(|_| LocalError::WorkerDied)?;
                                in_flight += 1;
                                progressed = true;
                            }
                        }
                    }
                }
                if !progressed {
                    break;
                }
            }
            if in_flight == 0 {
                break;
            }
            let done = done_rx.recv().map_err(|_| LocalError::WorkerDied)?;
            in_flight -= 1;
            match done.result {
                Ok(outs) => {
                    let primary = engine.nodes_of(done.task).expect("task is running")[0];
                    let attempt = engine.attempt(done.task);
                    let refs: BTreeMap<FutureId, ArtifactRef> = outs.into_iter().collect();
                    let effects = engine.on_complete(done.task, &refs)?;
                    tee.emit(RunEvent::complete(ts(&started), done.task, primary, attempt));
                    completed += 1;
                    for n in &effects.notifications {
                        tee.emit(RunEvent::future_set(ts(&started), &n.name, n.shard));
                    }
                    for q in &effects.queued {
                        tee.emit(RunEvent::ready(ts(&started), q.task, q.shard));
                    }
                }
                Err(_) => match engine.on_task_failed(done.task)? {
                    FailureOutcome::Retry { attempt } => {
                        tee.emit(RunEvent::retry(ts(&started), done.task, attempt));
                    }
                    FailureOutcome::Abandoned { attempt } => {
                        tee.emit(RunEvent::fail_task(ts(&started), done.task, attempt));
                    }
                },
            }
        }
        Ok(())
    })();
    drop(work_tx);
    for t in threads {
        let _ = t.join();
    }
    run_result?;

    let verdict = engine.verdict();
    let graph = engine.into_graph();
    let mut artifacts: BTreeMap<String, ArtifactRef> = BTreeMap::new();
    for cell in graph.futures() {
        if let Some(a) = cell.value.as_ref().and_then(|v| v.as_artifact()) {
            artifacts.entry(a.name.clone()).or_insert_with(|| a.clone());
        }
    }
    Ok(LocalOutcome {
        graph,
        events: tee.copy,
        verdict,
        tasks_completed: completed,
        preloaded,
        wall_seconds: started.elapsed().as_secs_f64(),
        artifacts: artifacts.into_values().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::workloads;
    use crate::dispatch::check_log;

    fn opts(dir: &Path, workers: u32) -> LocalOptions {
        LocalOptions {
            workers,
            run_root: dir.to_path_buf(),
            run_id: "local".into(),
            ..LocalOptions::default()
        }
    }

    fn seeds_of(wl: &workloads::Workload) -> BTreeMap<String, Vec<u8>> {
        wl.seeds.iter().cloned().collect()
    }

    #[test]
    fn noop_pipeline_runs_to_quiescence_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let wl = workloads::pipeline(4);
        let seeds = seeds_of(&wl);
        let mut sink = Vec::new();
        let out = run_local(wl.graph, &seeds, &opts(dir.path(), 2), &mut sink).unwrap();
        assert_eq!(out.verdict, Quiescence::Quiescent);
        assert_eq!(out.tasks_completed, 4);
        let violations = check_log(&out.events, &out.graph, &ShardPlan::new(1), true);
        assert!(violations.is_empty(), "{violations:?}");
        // artifacts really exist where the refs say
        for a in &out.artifacts {
            let path = dir.path().join("artifacts").join(&a.name);
            let content = std::fs::read(&path).expect("artifact file exists");
            assert_eq!(content_digest(&content), a.digest, "{}", a.name);
        }
        // streamed sink saw the same events
        assert_eq!(sink, out.events);
    }

    #[test]
    fn worker_count_does_not_change_artifacts() {
        let digests = |workers: u32| {
            let dir = tempfile::tempdir().unwrap();
            let wl = workloads::diamond_mesh(3, 2);
            let seeds = seeds_of(&wl);
            let mut sink = Vec::new();
            let out = run_local(wl.graph, &seeds, &opts(dir.path(), workers), &mut sink).unwrap();
            assert_eq!(out.verdict, Quiescence::Quiescent);
            out.graph.final_values()
        };
        assert_eq!(digests(1), digests(6));
    }

    #[test]
    fn missing_program_exhausts_retries_and_deadlocks() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = crate::dataflow::GraphBuilder::new();
        let seed = b.future("seed", crate::dataflow::FutureKind::File, false);
        b.set_artifact_hint(seed, "seed.dat".into());
        let out_f = b.future("out", crate::dataflow::FutureKind::File, false);
        b.task(
            "broken",
            "nosuch",
            vec![
                crate::dataflow::Word::Lit("definitely-not-a-real-program".into()),
                crate::dataflow::Word::Inputs(0..1),
                crate::dataflow::Word::Output(0),
            ],
            vec![seed],
            vec![out_f],
            1,
            None,
        )
        .unwrap();
        b.bind_external(
            seed,
            crate::dataflow::FutureValue::File(ArtifactRef {
                name: "seed.dat".into(),
                size: 5,
                digest: content_digest(b"seed\n"),
                persistence: Persistence::Persistent,
                locations: Default::default(),
            }),
        )
        .unwrap();
        let graph = b.build().unwrap();
        let seeds: BTreeMap<String, Vec<u8>> =
            [("seed.dat".to_string(), b"seed\n".to_vec())].into();
        let mut o = opts(dir.path(), 2);
        o.max_retries = 1;
        let mut sink = Vec::new();
        let out = run_local(graph, &seeds, &o, &mut sink).unwrap();
        assert!(matches!(out.verdict, Quiescence::Deadlocked(_)));
        let retries = out
            .events
            .iter()
            .filter(|e| e.kind == crate::dispatch::EventKind::Retry)
            .count();
        assert_eq!(retries, 1, "one retry then abandonment");
        // the error is recorded next to the task
        let msg = std::fs::read_to_string(dir.path().join("tasks/t0/error.txt")).unwrap();
        assert!(msg.contains("definitely-not-a-real-program"));
    }

    #[test]
    fn resume_reuses_published_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let wl = workloads::pipeline(3);
        let seeds = seeds_of(&wl);
        let mut sink = Vec::new();
        let first = run_local(wl.graph, &seeds, &opts(dir.path(), 2), &mut sink).unwrap();
        assert_eq!(first.tasks_completed, 3);

        // second session over the same run root: everything is inherited
        let wl = workloads::pipeline(3);
        let mut o = opts(dir.path(), 2);
        o.resume = true;
        let mut sink = Vec::new();
        let second = run_local(wl.graph, &seeds, &o, &mut sink).unwrap();
        assert_eq!(second.verdict, Quiescence::Quiescent);
        assert_eq!(second.preloaded, 3);
        assert_eq!(second.tasks_completed, 0);
        assert_eq!(second.graph.final_values(), first.graph.final_values());

        // drop one artifact: only its producer re-runs, and the done set
        // still covers every task afterwards
        let lost = first
            .artifacts
            .iter()
            .find(|a| a.name.starts_with("local/t1/"))
            .expect("unmapped middle output")
            .name
            .clone();
        std::fs::remove_file(dir.path().join("artifacts").join(&lost)).unwrap();
        let wl = workloads::pipeline(3);
        let mut sink = Vec::new();
        let third = run_local(wl.graph, &seeds, &o, &mut sink).unwrap();
        assert_eq!(third.verdict, Quiescence::Quiescent);
        assert_eq!(third.preloaded, 1, "only the seed-adjacent task is inherited");
        assert_eq!(third.tasks_completed, 2, "the lost producer and its dependent re-run");
        assert_eq!(third.graph.final_values(), first.graph.final_values());
    }
}
