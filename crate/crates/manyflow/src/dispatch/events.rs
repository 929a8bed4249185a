//! The run event log: one JSON object per line, one line per event.
//!
//! The log is the ground truth a finished run leaves behind; the checker
//! at the bottom of this module replays one against its graph and flags
//! safety violations, which is how scheduler changes are kept honest.

use crate::dataflow::{DataflowGraph, Producer, TaskId};
use crate::datastore::NodeId;
use crate::dispatch::ShardPlan;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Task exists (emitted once per task when the run starts).
    Submit,
    /// Task entered a shard's ready queue.
    Ready,
    /// One node reserved for a task (width-w tasks emit w of these).
    Alloc,
    /// Task began executing; `node` is its primary node.
    Start,
    Complete,
    /// With `task`: the task is abandoned. Without: a node died.
    Fail,
    /// Task re-queued after a failure or a lost volatile output.
    Retry,
    /// Bytes moved between locations.
    Xfer,
    /// A future's value reached a consumer-owning shard.
    FutureSet,
}

/// A run event. Field meanings vary slightly by kind (documented on
/// [`EventKind`]); absent fields are omitted from the JSON. `artifact`
/// carries the future name on `future-set` events and the artifact name
/// on `xfer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub ts: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shard: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attempt: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub artifact: Option<String>,
    /// Source location of an `xfer`, e.g. `n3` or `shared-fs`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub from: Option<String>,
}

impl RunEvent {
    fn base(ts: f64, kind: EventKind) -> Self {
        RunEvent {
            ts,
            kind,
            task: None,
            node: None,
            shard: None,
            attempt: None,
            bytes: None,
            artifact: None,
            from: None,
        }
    }

    pub fn submit(ts: f64, task: TaskId) -> Self {
        let mut e = Self::base(ts, EventKind::Submit);
        e.task = Some(task.to_string());
        e
    }

    pub fn ready(ts: f64, task: TaskId, shard: u32) -> Self {
        let mut e = Self::base(ts, EventKind::Ready);
        e.task = Some(task.to_string());
        e.shard = Some(shard);
        e
    }

    pub fn alloc(ts: f64, task: TaskId, node: NodeId, shard: u32, attempt: u32) -> Self {
        let mut e = Self::base(ts, EventKind::Alloc);
        e.task = Some(task.to_string());
        e.node = Some(node.to_string());
        e.shard = Some(shard);
        e.attempt = Some(attempt);
        e
    }

    pub fn start(ts: f64, task: TaskId, node: NodeId, shard: u32, attempt: u32) -> Self {
        let mut e = Self::base(ts, EventKind::Start);
        e.task = Some(task.to_string());
        e.node = Some(node.to_string());
        e.shard = Some(shard);
        e.attempt = Some(attempt);
        e
    }

    pub fn complete(ts: f64, task: TaskId, node: NodeId, attempt: u32) -> Self {
        let mut e = Self::base(ts, EventKind::Complete);
        e.task = Some(task.to_string());
        e.node = Some(node.to_string());
        e.attempt = Some(attempt);
        e
    }

    pub fn fail_task(ts: f64, task: TaskId, attempt: u32) -> Self {
        let mut e = Self::base(ts, EventKind::Fail);
        e.task = Some(task.to_string());
        e.attempt = Some(attempt);
        e
    }

    pub fn fail_node(ts: f64, node: NodeId) -> Self {
        let mut e = Self::base(ts, EventKind::Fail);
        e.node = Some(node.to_string());
        e
    }

    pub fn retry(ts: f64, task: TaskId, attempt: u32) -> Self {
        let mut e = Self::base(ts, EventKind::Retry);
        e.task = Some(task.to_string());
        e.attempt = Some(attempt);
        e
    }

    pub fn xfer(ts: f64, artifact: &str, from: &str, to: &str, bytes: u64) -> Self {
        let mut e = Self::base(ts, EventKind::Xfer);
        e.artifact = Some(artifact.to_string());
        e.from = Some(from.to_string());
        e.node = Some(to.to_string());
        e.bytes = Some(bytes);
        e
    }

    pub fn future_set(ts: f64, future_name: &str, shard: u32) -> Self {
        let mut e = Self::base(ts, EventKind::FutureSet);
        e.artifact = Some(future_name.to_string());
        e.shard = Some(shard);
        e
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Anything that accepts events: an in-memory vector for tests and the
/// simulator, a JSONL file for real runs.
pub trait EventSink {
    fn emit(&mut self, ev: RunEvent);
}

impl EventSink for Vec<RunEvent> {
    fn emit(&mut self, ev: RunEvent) {
        self.push(ev);
    }
}

/// Buffered JSONL writer.
pub struct JsonlSink<W: std::io::Write> {
    w: std::io::BufWriter<W>,
}

impl<W: std::io::Write> JsonlSink<W> {
    pub fn new(w: W) -> Self {
        JsonlSink {
            w: std::io::BufWriter::new(w),
        }
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        use std::io::Write;
        self.w.flush()
    }
}

impl<W: std::io::Write> EventSink for JsonlSink<W> {
    fn emit(&mut self, ev: RunEvent) {
        use std::io::Write;
        let _ = writeln!(self.w, "{}", ev.to_jsonl());
    }
}

/// A sink that keeps a copy and forwards to another sink.
pub struct TeeSink<'a, A: EventSink> {
    pub inner: &'a mut A,
    pub copy: Vec<RunEvent>,
}

impl<'a, A: EventSink> TeeSink<'a, A> {
    pub fn new(inner: &'a mut A) -> Self {
        TeeSink {
            inner,
            copy: Vec::new(),
        }
    }
}

impl<A: EventSink> EventSink for TeeSink<'_, A> {
    fn emit(&mut self, ev: RunEvent) {
        self.copy.push(ev.clone());
        self.inner.emit(ev);
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<RunEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Replay a log against the graph it claims to describe and report every
/// safety violation found:
///
/// - timestamps must be non-decreasing;
/// - no task starts before every task-produced input reached the
///   starting task's owner shard (`future-set` precedes `start`);
/// - allocations respect single-slot nodes and never touch dead nodes,
///   so Σ width(running) ≤ live nodes at all times;
/// - a `future-set` is delivered at most once per (future, shard);
/// - a task completes at most once per attempt (re-completions must be
///   separated by an explicit `retry`);
/// - with `expect_quiescent`, every submitted task ends completed.
pub fn check_log(
    events: &[RunEvent],
    graph: &DataflowGraph,
    plan: &ShardPlan,
    expect_quiescent: bool,
) -> Vec<String> {
    let mut violations = Vec::new();
    let mut last_ts = f64::NEG_INFINITY;
    let mut delivered: BTreeSet<(String, u32)> = BTreeSet::new();
    let mut busy: BTreeMap<String, String> = BTreeMap::new(); // node -> task
    let mut dead: BTreeSet<String> = BTreeSet::new();
    let mut submitted: BTreeSet<String> = BTreeSet::new();
    // per task: last lifecycle phase and completion/retry bookkeeping
    #[derive(Default)]
    struct TaskTrace {
        completes: u32,
        retries_since_complete: u32,
        started_this_attempt: bool,
        terminal: Option<EventKind>,
    }
    let mut traces: BTreeMap<String, TaskTrace> = BTreeMap::new();

    let task_ids: BTreeMap<String, TaskId> =
        graph.tasks().map(|t| (t.id.to_string(), t.id)).collect();

    let release = |busy: &mut BTreeMap<String, String>, task: &str| {
        let nodes: Vec<String> = busy
            .iter()
            .filter(|(_, t)| t.as_str() == task)
            .map(|(n, _)| n.clone())
            .collect();
        for n in nodes {
            busy.remove(&n);
        }
    };

    for (i, ev) in events.iter().enumerate() {
        if ev.ts < last_ts {
            violations.push(format!("event {i}: timestamp went backwards ({} < {last_ts})", ev.ts));
        }
        last_ts = ev.ts;
        let task = ev.task.clone().unwrap_or_default();
        match ev.kind {
            EventKind::Submit => {
                if !submitted.insert(task.clone()) {
                    violations.push(format!("event {i}: {task} submitted twice"));
                }
            }
            EventKind::Ready => {}
            EventKind::Alloc => {
                let node = ev.node.clone().unwrap_or_default();
                if dead.contains(&node) {
                    violations.push(format!("event {i}: alloc of dead node {node}"));
                }
                if let Some(holder) = busy.get(&node) {
                    violations.push(format!(
                        "event {i}: node {node} allocated to {task} while held by {holder}"
                    ));
                }
                busy.insert(node, task);
            }
            EventKind::Start => {
                let trace = traces.entry(task.clone()).or_default();
                if trace.started_this_attempt {
                    violations.push(format!("event {i}: {task} started twice in one attempt"));
                }
                trace.started_this_attempt = true;
                // dataflow safety: inputs must have reached this shard
                if let Some(id) = task_ids.get(&task) {
                    let spec = graph.task(*id).expect("task exists");
                    let owner = plan.owner(*id);
                    for f in spec.inputs.iter().collect::<BTreeSet<_>>() {
                        let cell = graph.future(*f);
                        if matches!(cell.producer, Some(Producer::Task(_)))
                            && !delivered.contains(&(cell.name.clone(), owner))
                        {
                            violations.push(format!(
                                "event {i}: {task} started before `{}` reached shard {owner}",
                                cell.name
                            ));
                        }
                    }
                } else {
                    violations.push(format!("event {i}: start of unknown task {task}"));
                }
            }
            EventKind::Complete => {
                let trace = traces.entry(task.clone()).or_default();
                if trace.completes > 0 && trace.retries_since_complete == 0 {
                    violations.push(format!(
                        "event {i}: {task} completed twice with no retry between"
                    ));
                }
                trace.completes += 1;
                trace.retries_since_complete = 0;
                trace.started_this_attempt = false;
                trace.terminal = Some(EventKind::Complete);
                release(&mut busy, &task);
            }
            EventKind::Fail => {
                if ev.task.is_some() {
                    let trace = traces.entry(task.clone()).or_default();
                    trace.started_this_attempt = false;
                    trace.terminal = Some(EventKind::Fail);
                    release(&mut busy, &task);
                } else if let Some(node) = &ev.node {
                    dead.insert(node.clone());
                }
            }
            EventKind::Retry => {
                let trace = traces.entry(task.clone()).or_default();
                trace.retries_since_complete += 1;
                trace.started_this_attempt = false;
                trace.terminal = Some(EventKind::Retry);
                release(&mut busy, &task);
            }
            EventKind::Xfer => {}
            EventKind::FutureSet => {
                let name = ev.artifact.clone().unwrap_or_default();
                let shard = ev.shard.unwrap_or(0);
                if !delivered.insert((name.clone(), shard)) {
                    violations.push(format!(
                        "event {i}: future `{name}` delivered to shard {shard} twice"
                    ));
                }
            }
        }
    }

    if expect_quiescent {
        for t in &submitted {
            match traces.get(t).and_then(|tr| tr.terminal) {
                Some(EventKind::Complete) => {}
                other => violations.push(format!(
                    "task {t} did not end completed (last lifecycle event: {other:?})"
                )),
            }
        }
        if submitted.len() != graph.task_count() {
            violations.push(format!(
                "submitted {} tasks but the graph has {}",
                submitted.len(),
                graph.task_count()
            ));
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_serialize_without_null_noise() {
        let e = RunEvent::submit(0.0, TaskId(3));
        assert_eq!(e.to_jsonl(), r#"{"ts":0.0,"kind":"submit","task":"t3"}"#);
        let x = RunEvent::xfer(1.5, "a.dat", "shared-fs", "n2", 4096);
        assert_eq!(
            x.to_jsonl(),
            r#"{"ts":1.5,"kind":"xfer","node":"n2","bytes":4096,"artifact":"a.dat","from":"shared-fs"}"#
        );
        let f = RunEvent::future_set(2.0, "cont0", 1);
        assert_eq!(
            f.to_jsonl(),
            r#"{"ts":2.0,"kind":"future-set","shard":1,"artifact":"cont0"}"#
        );
    }

    #[test]
    fn jsonl_round_trips() {
        let events = vec![
            RunEvent::submit(0.0, TaskId(0)),
            RunEvent::ready(0.0, TaskId(0), 0),
            RunEvent::alloc(0.5, TaskId(0), NodeId(1), 0, 0),
            RunEvent::start(0.5, TaskId(0), NodeId(1), 0, 0),
            RunEvent::complete(1.0, TaskId(0), NodeId(1), 0),
        ];
        let text: String = events
            .iter()
            .map(|e| e.to_jsonl() + "\n")
            .collect();
        assert_eq!(parse_jsonl(&text).unwrap(), events);
    }

    #[test]
    fn checker_flags_double_allocation() {
        let events = vec![
            RunEvent::alloc(0.0, TaskId(0), NodeId(0), 0, 0),
            RunEvent::alloc(0.0, TaskId(1), NodeId(0), 0, 0),
        ];
        let g = crate::dataflow::workloads::fanout(2).graph;
        let v = check_log(&events, &g, &ShardPlan::central(), false);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("while held by"));
    }

    #[test]
    fn checker_flags_backwards_time_and_dead_node_use() {
        let events = vec![
            RunEvent::fail_node(5.0, NodeId(0)),
            RunEvent::alloc(4.0, TaskId(0), NodeId(0), 0, 0),
        ];
        let g = crate::dataflow::workloads::fanout(1).graph;
        let v = check_log(&events, &g, &ShardPlan::central(), false);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn checker_flags_start_before_inputs_delivered() {
        // pipeline: s1's input x[0] is produced by s0
        let g = crate::dataflow::workloads::pipeline(2).graph;
        let plan = ShardPlan::central();
        let bad = vec![RunEvent::start(0.0, TaskId(1), NodeId(0), 0, 0)];
        let v = check_log(&bad, &g, &plan, false);
        assert!(v.iter().any(|m| m.contains("before `x[0]`")), "{v:?}");

        let good = vec![
            RunEvent::future_set(0.0, "x[0]", 0),
            RunEvent::start(0.1, TaskId(1), NodeId(0), 0, 0),
        ];
        assert!(check_log(&good, &g, &plan, false).is_empty());
    }

    #[test]
    fn checker_enforces_single_delivery_and_retry_separated_completes() {
        let g = crate::dataflow::workloads::fanout(1).graph;
        let plan = ShardPlan::central();
        let dup = vec![
            RunEvent::future_set(0.0, "out[0]", 0),
            RunEvent::future_set(0.1, "out[0]", 0),
        ];
        assert_eq!(check_log(&dup, &g, &plan, false).len(), 1);

        let double_complete = vec![
            RunEvent::complete(0.0, TaskId(0), NodeId(0), 0),
            RunEvent::complete(0.1, TaskId(0), NodeId(0), 0),
        ];
        assert_eq!(check_log(&double_complete, &g, &plan, false).len(), 1);

        // a retry between completions is the volatile-recovery shape
        let recompleted = vec![
            RunEvent::complete(0.0, TaskId(0), NodeId(0), 0),
            RunEvent::retry(0.1, TaskId(0), 1),
            RunEvent::complete(0.2, TaskId(0), NodeId(0), 1),
        ];
        assert!(check_log(&recompleted, &g, &plan, false).is_empty());
    }
}
