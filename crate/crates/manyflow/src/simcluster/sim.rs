//! Discrete-event cluster simulator.
//!
//! Time is kept in integer nanoseconds and every tie is broken by
//! scheduling order, so a given graph + config produces one event log,
//! bit for bit. The model charges:
//!
//! - `dispatch_latency` per launch decision, per shard — a dispatcher is
//!   busy while issuing, which is exactly the bottleneck sharding splits;
//! - `size/bandwidth + 100µs` per transfer (staging inputs to the running
//!   node, write-through flushes, collective-hint copies);
//! - the task's compute duration between staging and its output puts.
//!
//! Node failures take their slot, their stored bytes, and whatever was
//! running there. Lost artifacts whose producer already finished revert
//! that producer (volatile outputs are regenerated, not restored); tasks
//! that go to stage a missing input are parked and re-queued when the
//! artifact is put again.
//!
//! Input staging is synchronous (compute starts after the last byte
//! lands), output flushing is asynchronous: the store is updated and the
//! node freed at compute end, while `xfer` rows record when each flush
//! lands on the wire. Engine transitions are stamped at the moment they
//! are decided, and the finished log is collated by timestamp.

use super::{ClusterConfig, SimError, SimMetrics};
use crate::dataflow::{DataflowGraph, FutureId, Quiescence, TaskId, TaskStatus};
use crate::datastore::{
    execute_plan, plan_transfers, ArtifactRef, CdmHint, ClusterStore, NodeId, StoreError, Subject,
};
use crate::dispatch::{
    eval_task, output_artifact_name, DispatchError, DispatchPolicy, Engine, FailureOutcome,
    Launch, Poll, RunEvent, ShardPlan, WorkerPool,
};
use crate::hash::fnv1a;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

/// Fixed per-transfer setup cost, seconds.
const XFER_SETUP: f64 = 1e-4;

fn ns(seconds: f64) -> u64 {
    (seconds.max(0.0) * 1e9).round() as u64
}

fn sec(t: u64) -> f64 {
    t as f64 / 1e9
}

#[derive(Debug)]
pub struct SimResult {
    pub graph: DataflowGraph,
    pub events: Vec<RunEvent>,
    pub verdict: Quiescence,
    pub metrics: SimMetrics,
    pub store: ClusterStore,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Dispatch { shard: u32 },
    TaskDone { task: TaskId, attempt: u32 },
    NodeFails { node: NodeId },
}

struct PendingRun {
    attempt: u32,
    outs: BTreeMap<FutureId, (ArtifactRef, Vec<u8>)>,
}

struct Sim<'a> {
    cfg: &'a ClusterConfig,
    run_id: &'a str,
    engine: Engine,
    store: ClusterStore,
    events: Vec<RunEvent>,
    heap: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    seq: u64,
    busy_until: Vec<u64>,
    scheduled: Vec<bool>,
    /// Outputs computed at launch, held until the completion event fires.
    pending: BTreeMap<TaskId, PendingRun>,
    /// Artifact name → tasks parked because staging found it unreadable.
    parked: BTreeMap<String, Vec<TaskId>>,
    /// Artifact name → producing task, for loss recovery.
    produced_by: BTreeMap<String, TaskId>,
    hints: Vec<(CdmHint, bool)>,
    completed: u64,
    last_complete: u64,
}

/// Run `graph` to quiescence (or stall) on a simulated cluster.
pub fn run_simulated(
    graph: DataflowGraph,
    cfg: &ClusterConfig,
    shards: u32,
    seeds: &BTreeMap<String, Vec<u8>>,
    hints: &[CdmHint],
    run_id: &str,
) -> Result<SimResult, SimError> {
    for f in &cfg.failures {
        if f.node >= cfg.nodes {
            return Err(SimError::UnknownFailureNode {
                node: f.node,
                nodes: cfg.nodes,
            });
        }
    }

    let mut store = ClusterStore::new(cfg.store, cfg.nodes, cfg.node_capacity, cfg.chunk_bytes);
    let mut events = Vec::new();

    // external artifacts enter the store before anything can run
    let bindings: Vec<(String, crate::datastore::Persistence, u64)> = graph
        .external_bindings()
        .into_iter()
        .map(|(_, a)| (a.name.clone(), a.persistence, a.digest))
        .collect();
    for (name, persistence, digest) in bindings {
        let content = seeds
            .get(&name)
            .ok_or(DispatchError::MissingSeed { name: name.clone() })?;
        if digest != 0 && fnv1a(content) != digest {
            return Err(SimError::SeedDigest { name });
        }
        let outcome = store.put(&name, content, persistence, None)?;
        for tr in outcome.transfers {
            events.push(RunEvent::xfer(
                0.0,
                &tr.name,
                &tr.from.to_string(),
                &tr.to.to_string(),
                tr.bytes,
            ));
        }
    }

    let mut produced_by = BTreeMap::new();
    for t in graph.tasks() {
        for i in 0..t.outputs.len() {
            produced_by.insert(output_artifact_name(&graph, t.id, i, run_id), t.id);
        }
    }

    for t in graph.tasks() {
        events.push(RunEvent::submit(0.0, t.id));
    }

    let policy = DispatchPolicy {
        max_retries: cfg.max_retries,
    };
    let pool = WorkerPool::new(cfg.nodes);
    let (engine, initial) = Engine::new(graph, pool, ShardPlan::new(shards), policy);

    let mut sim = Sim {
        cfg,
        run_id,
        engine,
        store,
        events,
        heap: BinaryHeap::new(),
        seq: 0,
        busy_until: vec![0; shards as usize],
        scheduled: vec![false; shards as usize],
        pending: BTreeMap::new(),
        parked: BTreeMap::new(),
        produced_by,
        hints: hints.iter().map(|h| (h.clone(), false)).collect(),
        completed: 0,
        last_complete: 0,
    };

    for q in initial {
        sim.emit(RunEvent::ready(0.0, q.task, q.shard));
        sim.wake(q.shard, 0);
    }
    for f in &cfg.failures {
        sim.schedule(ns(f.at), Ev::NodeFails { node: NodeId(f.node) });
    }
    sim.run_ready_hints(0)?;
    sim.run()
}

impl Sim<'_> {
    fn emit(&mut self, ev: RunEvent) {
        self.events.push(ev);
    }

    fn schedule(&mut self, t: u64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((t, self.seq, ev)));
    }

    /// Schedule a dispatch no earlier than the shard's busy horizon.
    /// Event time never decreases, so a pending wake is always at least
    /// as early as any wake we would add now.
    fn wake(&mut self, shard: u32, t: u64) {
        if self.scheduled[shard as usize] {
            return;
        }
        self.scheduled[shard as usize] = true;
        let at = t.max(self.busy_until[shard as usize]);
        self.schedule(at, Ev::Dispatch { shard });
    }

    fn wake_all_queued(&mut self, t: u64) {
        for shard in 0..self.engine.plan().shards() {
            if self.engine.queue_len(shard) > 0 {
                self.wake(shard, t);
            }
        }
    }

    fn transfer_ns(&self, bytes: u64) -> u64 {
        ns(bytes as f64 / self.cfg.bandwidth.max(1.0) + XFER_SETUP)
    }

    fn duration_ns(&self, task: TaskId) -> u64 {
        let spec = self.engine.graph().task(task).expect("launched task exists");
        let seconds = spec.duration.unwrap_or_else(|| {
            self.cfg
                .app_durations
                .get(&spec.app)
                .copied()
                .unwrap_or(self.cfg.default_duration)
        });
        ns(seconds)
    }

    fn run(mut self) -> Result<SimResult, SimError> {
        while let Some(Reverse((t, _, ev))) = self.heap.pop() {
            match ev {
                Ev::Dispatch { shard } => self.on_dispatch(t, shard)?,
                Ev::TaskDone { task, attempt } => self.on_task_done(t, task, attempt)?,
                Ev::NodeFails { node } => self.on_node_fails(t, node)?,
            }
        }

        // handlers project transfer landing times past their own event, so
        // collate by timestamp; the sort is stable and all state-transition
        // events carry their decision time, which keeps causal order intact
        self.events
            .sort_by(|a, b| a.ts.partial_cmp(&b.ts).expect("finite timestamps"));

        let verdict = self.engine.verdict();
        let mut egress_bytes: BTreeMap<String, u64> = BTreeMap::new();
        let mut reruns = 0;
        for ev in &self.events {
            match ev.kind {
                crate::dispatch::EventKind::Xfer => {
                    if let (Some(from), Some(bytes)) = (&ev.from, ev.bytes) {
                        *egress_bytes.entry(from.clone()).or_default() += bytes;
                    }
                }
                crate::dispatch::EventKind::Retry => reruns += 1,
                _ => {}
            }
        }
        let makespan = sec(self.last_complete);
        let metrics = SimMetrics {
            makespan,
            tasks_completed: self.completed,
            throughput: if makespan > 0.0 {
                self.completed as f64 / makespan
            } else {
                0.0
            },
            egress_bytes,
            reruns,
        };
        Ok(SimResult {
            graph: self.engine.into_graph(),
            events: self.events,
            verdict,
            metrics,
            store: self.store,
        })
    }

    fn on_dispatch(&mut self, t: u64, shard: u32) -> Result<(), SimError> {
        self.scheduled[shard as usize] = false;
        match self.engine.poll_launch(shard) {
            Poll::Idle => {} // re-woken by the next completion or release
            Poll::ConfigFail { task, .. } => {
                let attempt = self.engine.attempt(task);
                self.emit(RunEvent::fail_task(sec(t), task, attempt));
                self.finish_dispatch(t, shard);
            }
            Poll::Launch(l) => {
                self.handle_launch(t, l)?;
                self.finish_dispatch(t, shard);
            }
        }
        Ok(())
    }

    fn finish_dispatch(&mut self, t: u64, shard: u32) {
        let end = t + ns(self.cfg.dispatch_latency);
        self.busy_until[shard as usize] = end;
        if self.engine.queue_len(shard) > 0 {
            self.wake(shard, end);
        }
    }

    fn handle_launch(&mut self, t: u64, l: Launch) -> Result<(), SimError> {
        for n in &l.nodes {
            self.emit(RunEvent::alloc(sec(t), l.task, *n, l.shard, l.attempt));
        }
        let primary = l.nodes[0];
        self.emit(RunEvent::start(sec(t), l.task, primary, l.shard, l.attempt));

        let input_names: Vec<String> = {
            let graph = self.engine.graph();
            let spec = graph.task(l.task)?;
            let distinct: BTreeSet<FutureId> = spec.inputs.iter().copied().collect();
            distinct
                .iter()
                .map(|f| {
                    graph
                        .future(*f)
                        .value
                        .as_ref()
                        .and_then(|v| v.as_artifact())
                        .map(|a| a.name.clone())
                        .expect("ready task has set inputs")
                })
                .collect()
        };

        let mut now = t;
        for name in input_names {
            match self.store.stage_to(&name, primary) {
                Ok(transfers) => {
                    for tr in transfers {
                        if tr.bytes == 0 && tr.from == tr.to {
                            continue; // already local, nothing moved
                        }
                        now += self.transfer_ns(tr.bytes);
                        self.emit(RunEvent::xfer(
                            sec(now),
                            &tr.name,
                            &tr.from.to_string(),
                            &tr.to.to_string(),
                            tr.bytes,
                        ));
                    }
                }
                Err(StoreError::MissingArtifact { .. }) => {
                    // the input existed when this task became ready but has
                    // since been lost: park until a re-put brings it back
                    self.engine.defer_staged(l.task)?;
                    self.emit(RunEvent::retry(sec(t), l.task, l.attempt));
                    self.parked.entry(name).or_default().push(l.task);
                    self.wake_all_queued(t);
                    return Ok(());
                }
                Err(StoreError::Capacity { .. }) => {
                    return self.task_failed(t, l.task);
                }
                Err(e) => return Err(e.into()),
            }
        }

        let outs = eval_task(self.engine.graph(), l.task, self.run_id, |n| {
            self.store.get(n).ok()
        })?;
        self.pending.insert(
            l.task,
            PendingRun {
                attempt: l.attempt,
                outs,
            },
        );
        let done_at = now + self.duration_ns(l.task);
        self.schedule(
            done_at,
            Ev::TaskDone {
                task: l.task,
                attempt: l.attempt,
            },
        );
        Ok(())
    }

    fn on_task_done(&mut self, t: u64, task: TaskId, attempt: u32) -> Result<(), SimError> {
        // stale when the node died under the task after this was scheduled
        if self.engine.attempt(task) != attempt
            || self.engine.graph().status(task)? != TaskStatus::Running
        {
            return Ok(());
        }
        let Some(run) = self.pending.remove(&task) else {
            return Ok(());
        };
        debug_assert_eq!(run.attempt, attempt);
        let primary = self.engine.nodes_of(task).expect("running task holds nodes")[0];

        // the store is updated and the slot freed now; flush transfers
        // drain in the background and are stamped when they land
        let mut flush_end = t;
        let mut refs = BTreeMap::new();
        let mut put_names = Vec::new();
        for (f, (artifact, content)) in &run.outs {
            match self
                .store
                .put(&artifact.name, content, artifact.persistence, Some(primary))
            {
                Ok(outcome) => {
                    for tr in outcome.transfers {
                        if tr.bytes == 0 && tr.from == tr.to {
                            continue;
                        }
                        flush_end += self.transfer_ns(tr.bytes);
                        self.emit(RunEvent::xfer(
                            sec(flush_end),
                            &tr.name,
                            &tr.from.to_string(),
                            &tr.to.to_string(),
                            tr.bytes,
                        ));
                    }
                    refs.insert(*f, outcome.artifact);
                    put_names.push(artifact.name.clone());
                }
                Err(StoreError::Capacity { .. }) => {
                    return self.task_failed(t, task);
                }
                Err(e) => return Err(e.into()),
            }
        }

        let effects = self.engine.on_complete(task, &refs)?;
        self.emit(RunEvent::complete(sec(t), task, primary, attempt));
        self.completed += 1;
        self.last_complete = self.last_complete.max(t);
        for n in &effects.notifications {
            self.emit(RunEvent::future_set(sec(t), &n.name, n.shard));
        }
        let queued = effects.queued.clone();
        for q in queued {
            self.emit(RunEvent::ready(sec(t), q.task, q.shard));
            self.wake(q.shard, t);
        }
        // released nodes may unblock queue heads anywhere
        self.wake_all_queued(t);

        // re-queue consumers that were parked on a just-regenerated input
        for name in &put_names {
            if let Some(waiters) = self.parked.remove(name) {
                for w in waiters {
                    let q = self.engine.requeue(w)?;
                    self.emit(RunEvent::ready(sec(t), q.task, q.shard));
                    self.wake(q.shard, t);
                }
            }
        }
        self.run_ready_hints(t)?;
        Ok(())
    }

    fn task_failed(&mut self, t: u64, task: TaskId) -> Result<(), SimError> {
        self.pending.remove(&task);
        match self.engine.on_task_failed(task)? {
            FailureOutcome::Retry { attempt } => {
                self.emit(RunEvent::retry(sec(t), task, attempt));
                let shard = self.engine.plan().owner(task);
                self.wake(shard, t);
            }
            FailureOutcome::Abandoned { attempt } => {
                self.emit(RunEvent::fail_task(sec(t), task, attempt));
            }
        }
        self.wake_all_queued(t);
        Ok(())
    }

    fn on_node_fails(&mut self, t: u64, node: NodeId) -> Result<(), SimError> {
        self.emit(RunEvent::fail_node(sec(t), node));
        for (victim, outcome) in self.engine.on_node_failed(node) {
            self.pending.remove(&victim);
            match outcome {
                FailureOutcome::Retry { attempt } => {
                    self.emit(RunEvent::retry(sec(t), victim, attempt));
                    let shard = self.engine.plan().owner(victim);
                    self.wake(shard, t);
                }
                FailureOutcome::Abandoned { attempt } => {
                    self.emit(RunEvent::fail_task(sec(t), victim, attempt));
                }
            }
        }
        // artifacts that lost their last copy: regenerate via their producer
        for name in self.store.node_failed(node) {
            let Some(&producer) = self.produced_by.get(&name) else {
                continue; // lost external seeds cannot be regenerated
            };
            match self.engine.on_artifact_lost(producer)? {
                Some(FailureOutcome::Retry { attempt }) => {
                    self.emit(RunEvent::retry(sec(t), producer, attempt));
                    let shard = self.engine.plan().owner(producer);
                    self.wake(shard, t);
                }
                Some(FailureOutcome::Abandoned { attempt }) => {
                    self.emit(RunEvent::fail_task(sec(t), producer, attempt));
                }
                None => {} // already pending or running again
            }
        }
        self.wake_all_queued(t);
        Ok(())
    }

    /// Fire collective hints whose subject artifacts are all readable.
    /// Each hint runs once; rounds overlap internally, so a hint's wall
    /// time is the sum over rounds of the slowest transfer in each.
    fn run_ready_hints(&mut self, now: u64) -> Result<(), SimError> {
        for i in 0..self.hints.len() {
            if self.hints[i].1 {
                continue;
            }
            let ready = match &self.hints[i].0.subject {
                Subject::One(name) => self.store.readable(name),
                Subject::Many(parts) => parts.iter().all(|p| self.store.readable(p)),
            };
            if !ready {
                continue;
            }
            let hint = self.hints[i].0.clone();
            self.hints[i].1 = true;
            let plan = plan_transfers(&hint, &self.store)?;
            execute_plan(&mut self.store, &plan)?;

            let mut round_span: BTreeMap<u32, u64> = BTreeMap::new();
            for s in &plan.steps {
                let d = self.transfer_ns(s.bytes);
                let e = round_span.entry(s.round).or_insert(0);
                *e = (*e).max(d);
            }
            let mut round_end: BTreeMap<u32, u64> = BTreeMap::new();
            let mut acc = 0;
            for (r, d) in round_span {
                acc += d;
                round_end.insert(r, acc);
            }
            for s in &plan.steps {
                let at = now + round_end[&s.round];
                self.emit(RunEvent::xfer(
                    sec(at),
                    &s.name,
                    &s.from.to_string(),
                    &NodeId::to_string(&s.to),
                    s.bytes,
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{workloads, FutureKind, FutureValue, GraphBuilder, Quiescence, Word};
    use crate::datastore::{Location, Persistence, StoreKind};
    use crate::dispatch::{check_log, EventKind};

    fn seeds_of(wl: &workloads::Workload) -> BTreeMap<String, Vec<u8>> {
        wl.seeds.iter().cloned().collect()
    }

    fn quiet_cfg() -> ClusterConfig {
        ClusterConfig {
            bandwidth: 1e12,
            default_duration: 0.01,
            ..ClusterConfig::default()
        }
    }

    fn assert_clean(res: &SimResult, shards: u32) {
        let plan = ShardPlan::new(shards);
        let violations = check_log(&res.events, &res.graph, &plan, true);
        assert!(violations.is_empty(), "log violations: {violations:?}");
    }

    #[test]
    fn pipeline_makespan_matches_hand_arithmetic() {
        // per task: stage one input (100µs setup, ~0 byte time) then
        // compute 10ms => 10.1ms per link, three in a chain; output
        // flushes overlap the successor and do not extend the makespan
        let wl = workloads::pipeline(3);
        let seeds = seeds_of(&wl);
        let res = run_simulated(wl.graph, &quiet_cfg(), 1, &seeds, &[], "sim").unwrap();
        assert_eq!(res.verdict, Quiescence::Quiescent);
        assert_clean(&res, 1);
        assert!(
            (res.metrics.makespan - 0.0303).abs() < 1e-9,
            "makespan {}",
            res.metrics.makespan
        );
        assert_eq!(res.metrics.tasks_completed, 3);
    }

    #[test]
    fn identical_inputs_replay_identical_logs() {
        let cfg = ClusterConfig {
            store: StoreKind::NodeMemory,
            dispatch_latency: 0.0005,
            failures: vec![super::super::FailureSpec { at: 0.013, node: 1 }],
            nodes: 6,
            ..quiet_cfg()
        };
        let runs: Vec<Vec<RunEvent>> = (0..2)
            .map(|_| {
                let wl = workloads::diamond_mesh(3, 4);
                let seeds = seeds_of(&wl);
                run_simulated(wl.graph, &cfg, 2, &seeds, &[], "sim")
                    .unwrap()
                    .events
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn sharding_multiplies_the_issue_rate() {
        let cfg = ClusterConfig {
            nodes: 32,
            dispatch_latency: 0.001,
            default_duration: 0.0,
            bandwidth: 1e12,
            ..ClusterConfig::default()
        };
        let run = |shards: u32| {
            let wl = workloads::fanout(200);
            let seeds = seeds_of(&wl);
            let res = run_simulated(wl.graph, &cfg, shards, &seeds, &[], "sim").unwrap();
            assert_eq!(res.verdict, Quiescence::Quiescent);
            assert_clean(&res, shards);
            res.metrics.makespan
        };
        let central = run(1);
        let sharded = run(4);
        // 200 launches through one dispatcher at 1ms each ≈ 0.2s; four
        // dispatchers split that by their share of the hash space
        assert!(central > 0.19, "central makespan {central}");
        assert!(
            central / sharded >= 2.0,
            "speedup only {}",
            central / sharded
        );
    }

    #[test]
    fn node_failure_retries_elsewhere_and_converges() {
        let wl = workloads::pipeline(2);
        let seeds = seeds_of(&wl);
        let baseline = run_simulated(
            wl.graph,
            &ClusterConfig {
                store: StoreKind::NodeMemory,
                nodes: 4,
                ..quiet_cfg()
            },
            1,
            &seeds,
            &[],
            "sim",
        )
        .unwrap();
        assert_eq!(baseline.verdict, Quiescence::Quiescent);

        // kill the first task's node mid-compute
        let cfg = ClusterConfig {
            store: StoreKind::NodeMemory,
            nodes: 4,
            failures: vec![super::super::FailureSpec { at: 0.005, node: 0 }],
            ..quiet_cfg()
        };
        let wl = workloads::pipeline(2);
        let res = run_simulated(wl.graph, &cfg, 1, &seeds, &[], "sim").unwrap();
        assert_eq!(res.verdict, Quiescence::Quiescent);
        assert_clean(&res, 1);
        assert_eq!(res.metrics.reruns, 1);
        // the retry landed on a surviving node and produced identical bytes
        assert_eq!(res.graph.final_values(), baseline.graph.final_values());
        let retried: Vec<_> = res
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Retry)
            .collect();
        assert_eq!(retried[0].task.as_deref(), Some("t0"));
    }

    /// A volatile artifact is lost after its producer finished and while its
    /// consumer is queued behind the producer's re-run. The consumer reaches
    /// staging before regeneration completes, parks, and is re-queued when
    /// the fresh copy lands. End state matches the failure-free run.
    #[test]
    fn volatile_loss_parks_the_consumer_until_regeneration() {
        let build = || {
            let mut b = GraphBuilder::new();
            let seed = b.future("seed", FutureKind::File, false);
            b.set_artifact_hint(seed, "seed.dat".into());
            let x = b.future("x", FutureKind::File, true); // volatile
            let y = b.future("y", FutureKind::File, false);
            let cmd = |outs: usize| {
                let mut v = vec![Word::Lit("gen".into())];
                for i in 0..outs {
                    v.push(Word::Output(i));
                }
                v
            };
            b.task("slowgen", "slowgen", cmd(1), vec![seed], vec![x], 1, None)
                .unwrap();
            b.task("fast", "fast", cmd(1), vec![x], vec![y], 1, None)
                .unwrap();
            b.bind_external(
                seed,
                FutureValue::File(ArtifactRef {
                    name: "seed.dat".into(),
                    size: 5,
                    digest: fnv1a(b"seed\n"),
                    persistence: Persistence::Persistent,
                    locations: Default::default(),
                }),
            )
            .unwrap();
            b.build().unwrap()
        };
        let seeds: BTreeMap<String, Vec<u8>> =
            [("seed.dat".to_string(), b"seed\n".to_vec())].into();
        let base_cfg = ClusterConfig {
            store: StoreKind::NodeMemory,
            nodes: 6,
            bandwidth: 1e12,
            dispatch_latency: 0.001,
            app_durations: [("slowgen".to_string(), 0.05), ("fast".to_string(), 0.01)].into(),
            ..ClusterConfig::default()
        };

        let clean = run_simulated(build(), &base_cfg, 1, &seeds, &[], "sim").unwrap();
        assert_eq!(clean.verdict, Quiescence::Quiescent);
        // where does the volatile artifact live, and where did `fast` run?
        let x_name = clean
            .store
            .artifacts()
            .find(|a| a.persistence == Persistence::Volatile)
            .expect("volatile artifact exists")
            .name
            .clone();
        let mut holders: Vec<u32> = clean
            .store
            .artifact(&x_name)
            .unwrap()
            .locations
            .iter()
            .filter_map(|l| match l {
                Location::Node(n) => Some(n.0),
                Location::SharedFs => None,
            })
            .collect();
        holders.sort_unstable();
        holders.dedup();
        assert!(!holders.is_empty(), "volatile output must live on nodes only");

        // `fast` finishes at ~60.3ms in the clean run. Kill every holder at
        // the same instant just before that: the copy `fast` staged dies
        // with its node, so nothing survives and x must be regenerated.
        // (Staggered kills would let the victim restage x from a survivor.)
        let mut cfg = base_cfg.clone();
        cfg.failures = holders
            .iter()
            .map(|n| super::super::FailureSpec { at: 0.060, node: *n })
            .collect();
        let res = run_simulated(build(), &cfg, 1, &seeds, &[], "sim").unwrap();
        assert_eq!(res.verdict, Quiescence::Quiescent, "events: {:#?}", res.events);
        assert_clean(&res, 1);

        // the producer ran twice, separated by a retry
        let completes = |task: &str, evs: &[RunEvent]| {
            evs.iter()
                .filter(|e| e.kind == EventKind::Complete && e.task.as_deref() == Some(task))
                .count()
        };
        assert_eq!(completes("t0", &res.events), 2, "producer regenerated once");
        // the consumer was parked at least once: it has a retry event that
        // did not come from a node death (its attempt number stayed put)
        let fast_retries: Vec<u32> = res
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Retry && e.task.as_deref() == Some("t1"))
            .filter_map(|e| e.attempt)
            .collect();
        assert!(!fast_retries.is_empty(), "consumer never parked: {:#?}", res.events);
        // regenerated bytes are identical
        assert_eq!(res.graph.final_values(), clean.graph.final_values());
    }

    #[test]
    fn broadcast_hint_prestages_the_seed() {
        // either way three copies of the seed move (four nodes, one home),
        // so counting transfers proves nothing; what the hint changes is
        // *when* they move. Launches are spaced 0.5ms apart by dispatch
        // latency, so lazy pulls land mid-run while the broadcast is done
        // within its two tree rounds (~0.2ms).
        let cfg = ClusterConfig {
            store: StoreKind::NodeMemory,
            nodes: 4,
            bandwidth: 1e12,
            dispatch_latency: 5e-4,
            default_duration: 0.001,
            ..ClusterConfig::default()
        };
        let late_seed_pulls = |events: &[RunEvent]| {
            events
                .iter()
                .filter(|e| {
                    e.kind == EventKind::Xfer
                        && e.artifact.as_deref() == Some("seed.dat")
                        && e.ts > 3e-4
                })
                .count()
        };
        let wl = workloads::fanout(12);
        let seeds = seeds_of(&wl);
        let plain = run_simulated(wl.graph, &cfg, 1, &seeds, &[], "sim").unwrap();
        let hint = CdmHint::parse("broadcast=seed.dat:n0,n1,n2,n3").unwrap();
        let wl = workloads::fanout(12);
        let hinted = run_simulated(wl.graph, &cfg, 1, &seeds, &[hint], "sim").unwrap();
        assert_eq!(hinted.verdict, Quiescence::Quiescent);
        assert!(
            late_seed_pulls(&plain.events) > 0,
            "expected on-demand pulls without the hint: {:#?}",
            plain.events
        );
        assert_eq!(
            late_seed_pulls(&hinted.events),
            0,
            "seed still moved after the broadcast: {:#?}",
            hinted.events
        );
        // all four nodes hold the seed after the broadcast
        for n in 0..4 {
            assert!(hinted.store.holds("seed.dat", NodeId(n)));
        }
    }

    #[test]
    fn striped_store_runs_match_shared_runs() {
        let wl = workloads::diamond_mesh(2, 2);
        let seeds = seeds_of(&wl);
        let shared = run_simulated(wl.graph, &quiet_cfg(), 1, &seeds, &[], "sim").unwrap();
        let cfg = ClusterConfig {
            store: StoreKind::Striped,
            chunk_bytes: 2,
            nodes: 4,
            ..quiet_cfg()
        };
        let wl = workloads::diamond_mesh(2, 2);
        let striped = run_simulated(wl.graph, &cfg, 1, &seeds, &[], "sim").unwrap();
        assert_eq!(striped.verdict, Quiescence::Quiescent);
        assert_clean(&striped, 1);
        assert_eq!(striped.graph.final_values(), shared.graph.final_values());
    }

    #[test]
    fn failure_schedule_must_name_real_nodes() {
        let wl = workloads::fanout(1);
        let seeds = seeds_of(&wl);
        let cfg = ClusterConfig {
            failures: vec![super::super::FailureSpec { at: 0.1, node: 99 }],
            ..ClusterConfig::default()
        };
        let err = run_simulated(wl.graph, &cfg, 1, &seeds, &[], "sim").unwrap_err();
        assert!(matches!(err, SimError::UnknownFailureNode { node: 99, .. }));
    }
}
