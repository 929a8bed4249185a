//! Single-assignment dataflow graphs.
//!
//! A graph is a fixed set of future cells (write-once value slots) and
//! task nodes wired by input/output lists. Structure never changes after
//! instantiation; only future states and task statuses move, and futures
//! move exactly once, unset → set. That one rule is what makes results
//! independent of execution order: any schedule that respects readiness
//! produces the same final (future → value) assignment.

mod build;
mod dot;
mod instantiate;
pub mod workloads;

pub use build::GraphBuilder;
pub use dot::to_dot;
pub use instantiate::instantiate;

use crate::datastore::{ArtifactRef, Persistence};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u32);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FutureId(pub u32);

impl std::fmt::Display for FutureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FutureKind {
    File,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FutureValue {
    File(ArtifactRef),
    Scalar(String),
}

impl FutureValue {
    pub fn as_artifact(&self) -> Option<&ArtifactRef> {
        match self {
            FutureValue::File(a) => Some(a),
            FutureValue::Scalar(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Producer {
    Task(TaskId),
    /// Bound at instantiation from outside the graph.
    External,
}

#[derive(Debug, Clone)]
pub struct FutureCell {
    pub id: FutureId,
    /// Variable-level name, e.g. `cont0` or `pout[5]`.
    pub name: String,
    pub kind: FutureKind,
    pub volatile: bool,
    /// Mapped logical path, if the script mapped this variable. Unmapped
    /// produced files get engine-generated artifact names at run time.
    pub artifact_hint: Option<String>,
    pub value: Option<FutureValue>,
    pub producer: Option<Producer>,
    pub consumers: BTreeSet<TaskId>,
}

impl FutureCell {
    pub fn is_set(&self) -> bool {
        self.value.is_some()
    }
}

/// One word of a task's command line, resolved against staged paths at
/// launch time.
#[derive(Debug, Clone, PartialEq)]
pub enum Word {
    Lit(String),
    /// Paths of `inputs[range]`, one word per future (slices expand here).
    Inputs(std::ops::Range<usize>),
    /// Path bound to `outputs[i]`.
    Output(usize),
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Human-readable instance name, e.g. `pore[1,3]`.
    pub name: String,
    pub app: String,
    pub command: Vec<Word>,
    /// Input futures in command order. May repeat a future; readiness
    /// counts distinct futures.
    pub inputs: Vec<FutureId>,
    pub outputs: Vec<FutureId>,
    /// App parameter names for outputs, used for generated artifact names.
    pub output_names: Vec<String>,
    pub width: u32,
    /// Persistent iff any output is persistent: such a task never needs
    /// re-execution once done.
    pub persistence: Persistence,
    /// Simulated seconds, if the script pinned one.
    pub duration: Option<f64>,
}

impl TaskSpec {
    /// Expand the command template to concrete words.
    pub fn resolve_command(
        &self,
        mut input_path: impl FnMut(usize, FutureId) -> String,
        mut output_path: impl FnMut(usize, FutureId) -> String,
    ) -> Vec<String> {
        let mut words = Vec::new();
        for w in &self.command {
            match w {
                Word::Lit(s) => words.push(s.clone()),
                Word::Inputs(r) => {
                    for i in r.clone() {
                        words.push(input_path(i, self.inputs[i]));
                    }
                }
                Word::Output(i) => words.push(output_path(*i, self.outputs[*i])),
            }
        }
        words
    }

    /// The program word (first literal) of the command.
    pub fn program(&self) -> Option<&str> {
        match self.command.first() {
            Some(Word::Lit(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl std::fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Running => "running",
            TaskStatus::Done => "done",
            TaskStatus::Failed => "failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
struct TaskNode {
    spec: TaskSpec,
    status: TaskStatus,
    /// Distinct input futures still unset.
    unset_inputs: u32,
    /// Topological depth: externals feed depth-1 tasks.
    depth: u32,
    /// Set while a done task re-runs to regenerate lost volatile output.
    recompleting: bool,
}

#[derive(Debug, Clone)]
pub struct DataflowGraph {
    futures: Vec<FutureCell>,
    tasks: Vec<TaskNode>,
    by_name: BTreeMap<String, FutureId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StuckFuture {
    pub future: FutureId,
    pub name: String,
    pub producer: Option<TaskId>,
    pub producer_status: Option<TaskStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Quiescence {
    Quiescent,
    Deadlocked(Vec<StuckFuture>),
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("double assignment: future `{name}` is already set")]
    DoubleAssign { name: String },
    #[error("unknown task {task}")]
    UnknownTask { task: TaskId },
    #[error("task {task} is not running")]
    NotRunning { task: TaskId },
    #[error("task {task} is not ready")]
    NotReady { task: TaskId },
    #[error("task {task}: completion must set exactly its declared outputs")]
    OutputMismatch { task: TaskId },
    #[error("task {task}: re-run produced different content for `{name}`")]
    NondeterministicRerun { task: TaskId, name: String },
    #[error("dependency cycle: {}", names.join(" -> "))]
    Cycle { names: Vec<String> },
    #[error("unbound input future(s): {}", names.join(", "))]
    UnboundInput { names: Vec<String> },
    #[error("task `{name}` declares no outputs")]
    EmptyOutputs { name: String },
    #[error("task `{name}` uses future `{future}` as both input and output")]
    InputOutputOverlap { name: String, future: String },
    #[error("task `{name}` has width 0")]
    BadWidth { name: String },
    #[error("negative index {index} into `{name}`")]
    NegativeIndex { name: String, index: i64 },
    #[error("cannot evaluate expression at instantiation: {message}")]
    Eval { message: String },
}

impl DataflowGraph {
    pub fn future(&self, id: FutureId) -> &FutureCell {
        &self.futures[id.0 as usize]
    }

    pub fn futures(&self) -> impl Iterator<Item = &FutureCell> {
        self.futures.iter()
    }

    pub fn future_by_name(&self, name: &str) -> Option<&FutureCell> {
        self.by_name.get(name).map(|id| self.future(*id))
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskSpec, GraphError> {
        self.tasks
            .get(id.0 as usize)
            .map(|n| &n.spec)
            .ok_or(GraphError::UnknownTask { task: id })
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().map(|n| &n.spec)
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn future_count(&self) -> usize {
        self.futures.len()
    }

    pub fn status(&self, id: TaskId) -> Result<TaskStatus, GraphError> {
        self.tasks
            .get(id.0 as usize)
            .map(|n| n.status)
            .ok_or(GraphError::UnknownTask { task: id })
    }

    /// Topological depth (externals feed depth 1). Dispatch orders its
    /// ready queue by (depth, task-id).
    pub fn depth(&self, id: TaskId) -> Result<u32, GraphError> {
        self.tasks
            .get(id.0 as usize)
            .map(|n| n.depth)
            .ok_or(GraphError::UnknownTask { task: id })
    }

    pub fn is_recompleting(&self, id: TaskId) -> bool {
        self.tasks
            .get(id.0 as usize)
            .map(|n| n.recompleting)
            .unwrap_or(false)
    }

    fn node(&mut self, id: TaskId) -> Result<&mut TaskNode, GraphError> {
        self.tasks
            .get_mut(id.0 as usize)
            .ok_or(GraphError::UnknownTask { task: id })
    }

    /// Exactly the pending tasks whose inputs are all set. Pure query.
    pub fn ready_tasks(&self) -> BTreeSet<TaskId> {
        self.tasks
            .iter()
            .filter(|n| n.status == TaskStatus::Pending && n.unset_inputs == 0)
            .map(|n| n.spec.id)
            .collect()
    }

    pub fn is_ready(&self, id: TaskId) -> bool {
        self.tasks
            .get(id.0 as usize)
            .map(|n| n.status == TaskStatus::Pending && n.unset_inputs == 0)
            .unwrap_or(false)
    }

    /// Move a ready task to running.
    pub fn start_task(&mut self, id: TaskId) -> Result<(), GraphError> {
        let node = self.node(id)?;
        if node.status != TaskStatus::Pending || node.unset_inputs > 0 {
            return Err(GraphError::NotReady { task: id });
        }
        node.status = TaskStatus::Running;
        Ok(())
    }

    /// Complete a running task, setting its output futures. `outs` must
    /// cover exactly the declared outputs. Returns the tasks that became
    /// ready as a consequence.
    ///
    /// A task re-running after volatile-output loss is completed with the
    /// same call; its outputs are already set, so the values are verified
    /// against the originals instead of assigned (re-setting a future
    /// would violate single assignment, and differing content would mean
    /// the app is not a pure function of its inputs).
    pub fn complete_task(
        &mut self,
        id: TaskId,
        outs: &BTreeMap<FutureId, ArtifactRef>,
    ) -> Result<BTreeSet<TaskId>, GraphError> {
        let node = self.tasks.get(id.0 as usize).ok_or(GraphError::UnknownTask { task: id })?;
        match node.status {
            TaskStatus::Running => {}
            TaskStatus::Done => {
                // completing an already-done task is the caller trying to
                // assign its outputs a second time
                let name = self.future(node.spec.outputs[0]).name.clone();
                return Err(GraphError::DoubleAssign { name });
            }
            _ => return Err(GraphError::NotRunning { task: id }),
        }
        let expected: BTreeSet<FutureId> = node.spec.outputs.iter().copied().collect();
        let given: BTreeSet<FutureId> = outs.keys().copied().collect();
        if expected != given {
            return Err(GraphError::OutputMismatch { task: id });
        }

        if node.recompleting {
            for (fid, artifact) in outs {
                let cell = &self.futures[fid.0 as usize];
                let prior = cell.value.as_ref().and_then(|v| v.as_artifact());
                match prior {
                    Some(a) if a.digest == artifact.digest && a.size == artifact.size => {}
                    _ => {
                        return Err(GraphError::NondeterministicRerun {
                            task: id,
                            name: cell.name.clone(),
                        })
                    }
                }
            }
            let node = self.node(id)?;
            node.recompleting = false;
            node.status = TaskStatus::Done;
            // consumers were already notified on first completion
            return Ok(BTreeSet::new());
        }

        for fid in outs.keys() {
            if self.futures[fid.0 as usize].is_set() {
                return Err(GraphError::DoubleAssign {
                    name: self.futures[fid.0 as usize].name.clone(),
                });
            }
        }
        self.node(id)?.status = TaskStatus::Done;
        let mut newly_ready = BTreeSet::new();
        for (fid, artifact) in outs {
            for t in self.set_future(*fid, FutureValue::File(artifact.clone())) {
                newly_ready.insert(t);
            }
        }
        Ok(newly_ready)
    }

    /// Set one future and return consumers that became ready. Internal:
    /// completion and external binding funnel through here.
    fn set_future(&mut self, id: FutureId, value: FutureValue) -> Vec<TaskId> {
        let cell = &mut self.futures[id.0 as usize];
        debug_assert!(cell.value.is_none(), "single assignment violated");
        cell.value = Some(value);
        let consumers: Vec<TaskId> = cell.consumers.iter().copied().collect();
        let mut newly_ready = Vec::new();
        for t in consumers {
            let node = &mut self.tasks[t.0 as usize];
            node.unset_inputs -= 1;
            if node.unset_inputs == 0 && node.status == TaskStatus::Pending {
                newly_ready.push(t);
            }
        }
        newly_ready
    }

    /// Mark a running task failed. Its outputs stay unset; downstream
    /// stays pending.
    pub fn fail_task(&mut self, id: TaskId) -> Result<(), GraphError> {
        let node = self.node(id)?;
        if node.status != TaskStatus::Running {
            return Err(GraphError::NotRunning { task: id });
        }
        node.status = TaskStatus::Failed;
        Ok(())
    }

    /// Revert a running task to pending (its node died under it). The
    /// retry decision belongs to the caller's policy.
    pub fn revert_running(&mut self, id: TaskId) -> Result<(), GraphError> {
        let node = self.node(id)?;
        if node.status != TaskStatus::Running {
            return Err(GraphError::NotRunning { task: id });
        }
        node.status = TaskStatus::Pending;
        Ok(())
    }

    /// Send a done task back through the ready queue to regenerate lost
    /// volatile outputs. Output futures stay set; the re-run's values are
    /// verified on completion.
    pub fn revert_done_task(&mut self, id: TaskId) -> Result<(), GraphError> {
        let node = self.node(id)?;
        if node.status != TaskStatus::Done {
            return Err(GraphError::NotRunning { task: id });
        }
        node.status = TaskStatus::Pending;
        node.recompleting = true;
        Ok(())
    }

    /// Anything still runnable? (pending-ready or running)
    pub fn has_live_work(&self) -> bool {
        self.tasks.iter().any(|n| {
            n.status == TaskStatus::Running
                || (n.status == TaskStatus::Pending && n.unset_inputs == 0)
        })
    }

    /// Termination verdict. Callers invoke this once nothing is running
    /// or ready; a graph with live work is reported as deadlocked only in
    /// the sense that the listed futures are still unset.
    pub fn check_quiescence(&self) -> Quiescence {
        let mut stuck = Vec::new();
        for cell in &self.futures {
            if cell.is_set() {
                continue;
            }
            let producer = match cell.producer {
                Some(Producer::Task(t)) => Some(t),
                _ => None,
            };
            stuck.push(StuckFuture {
                future: cell.id,
                name: cell.name.clone(),
                producer,
                producer_status: producer.map(|t| self.tasks[t.0 as usize].status),
            });
        }
        let all_done = self
            .tasks
            .iter()
            .all(|n| n.status == TaskStatus::Done && !n.recompleting);
        if stuck.is_empty() && all_done {
            Quiescence::Quiescent
        } else if stuck.is_empty() {
            // every future set but some task failed after retry of a
            // recompletion — surface the failed tasks' outputs
            let mut failed = Vec::new();
            for n in &self.tasks {
                if n.status != TaskStatus::Done {
                    for fid in &n.spec.outputs {
                        let cell = self.future(*fid);
                        failed.push(StuckFuture {
                            future: *fid,
                            name: cell.name.clone(),
                            producer: Some(n.spec.id),
                            producer_status: Some(n.status),
                        });
                    }
                }
            }
            if failed.is_empty() {
                Quiescence::Quiescent
            } else {
                Quiescence::Deadlocked(failed)
            }
        } else {
            Quiescence::Deadlocked(stuck)
        }
    }

    /// All (set) final values, for result-equivalence comparisons.
    pub fn final_values(&self) -> BTreeMap<String, Option<u64>> {
        self.futures
            .iter()
            .map(|c| {
                (
                    c.name.clone(),
                    c.value.as_ref().and_then(|v| v.as_artifact()).map(|a| a.digest),
                )
            })
            .collect()
    }

    /// Externally bound futures and their values, for store seeding.
    pub fn external_bindings(&self) -> Vec<(&FutureCell, &ArtifactRef)> {
        self.futures
            .iter()
            .filter(|c| c.producer == Some(Producer::External))
            .filter_map(|c| c.value.as_ref().and_then(|v| v.as_artifact()).map(|a| (c, a)))
            .collect()
    }
}
