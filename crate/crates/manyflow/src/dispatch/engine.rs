//! The dispatch state machine shared by every execution mode.
//!
//! The engine owns the graph, the worker pool, and one FIFO ready queue
//! per shard (ordered by topological depth, then task id). It decides
//! *what* runs *where*; its caller — the inline executor, the simulator,
//! or the local process runner — decides *when*, and reports completions
//! and failures back. Keeping every scheduling decision in one
//! deterministic core is what makes central and sharded dispatch land on
//! identical final artifacts.

use crate::dataflow::{DataflowGraph, FutureId, GraphError, Quiescence, TaskId, TaskStatus};
use crate::datastore::NodeId;
use crate::dispatch::pool::{AllocError, WorkerPool};
use crate::dispatch::ShardPlan;
use crate::datastore::ArtifactRef;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy)]
pub struct DispatchPolicy {
    /// Re-runs allowed per task beyond its first attempt, covering both
    /// failures and volatile-output regeneration.
    pub max_retries: u32,
}

impl Default for DispatchPolicy {
    fn default() -> Self {
        DispatchPolicy { max_retries: 3 }
    }
}

/// A task granted nodes, ready for its caller to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct Launch {
    pub task: TaskId,
    pub nodes: Vec<NodeId>,
    pub shard: u32,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Poll {
    Launch(Launch),
    /// The queue head wants more nodes than the pool will ever have; the
    /// task is dropped from the queue and abandoned.
    ConfigFail { task: TaskId, width: u32, pool: u32 },
    /// Nothing launchable on this shard right now.
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Queued {
    pub task: TaskId,
    pub shard: u32,
}

/// One future's value arriving at one consumer-owning shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub future: FutureId,
    pub name: String,
    pub shard: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionEffects {
    /// Deliveries triggered by this completion, at most one per
    /// (future, shard) over the whole run.
    pub notifications: Vec<Notification>,
    /// Tasks that entered ready queues, in notification order.
    pub queued: Vec<Queued>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailureOutcome {
    /// Task went back to its shard's queue.
    Retry { attempt: u32 },
    /// Retry budget exhausted; the task is permanently failed.
    Abandoned { attempt: u32 },
}

pub struct Engine {
    graph: DataflowGraph,
    pool: WorkerPool,
    plan: ShardPlan,
    policy: DispatchPolicy,
    queues: Vec<BTreeSet<(u32, TaskId)>>,
    running: BTreeMap<TaskId, Vec<NodeId>>,
    attempts: BTreeMap<TaskId, u32>,
    delivered: BTreeSet<(FutureId, u32)>,
    abandoned: BTreeSet<TaskId>,
}

impl Engine {
    /// Build an engine over a fresh graph. Returns the initial ready
    /// queue contents so the caller can log them.
    pub fn new(
        graph: DataflowGraph,
        pool: WorkerPool,
        plan: ShardPlan,
        policy: DispatchPolicy,
    ) -> (Self, Vec<Queued>) {
        let mut engine = Engine {
            queues: (0..plan.shards()).map(|_| BTreeSet::new()).collect(),
            graph,
            pool,
            plan,
            policy,
            running: BTreeMap::new(),
            attempts: BTreeMap::new(),
            delivered: BTreeSet::new(),
            abandoned: BTreeSet::new(),
        };
        let initial: Vec<Queued> = engine
            .graph
            .ready_tasks()
            .into_iter()
            .map(|t| engine.enqueue(t))
            .collect();
        (engine, initial)
    }

    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    pub fn into_graph(self) -> DataflowGraph {
        self.graph
    }

    pub fn plan(&self) -> &ShardPlan {
        &self.plan
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn attempt(&self, task: TaskId) -> u32 {
        self.attempts.get(&task).copied().unwrap_or(0)
    }

    pub fn running_count(&self) -> usize {
        self.running.len()
    }

    pub fn queued_count(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    pub fn queue_len(&self, shard: u32) -> usize {
        self.queues.get(shard as usize).map(|q| q.len()).unwrap_or(0)
    }

    pub fn nodes_of(&self, task: TaskId) -> Option<&[NodeId]> {
        self.running.get(&task).map(|v| v.as_slice())
    }

    fn enqueue(&mut self, task: TaskId) -> Queued {
        let shard = self.plan.owner(task);
        let depth = self.graph.depth(task).expect("queued task exists");
        self.queues[shard as usize].insert((depth, task));
        Queued { task, shard }
    }

    /// Try to launch the head of `shard`'s queue. Strict FIFO: a head
    /// that cannot get its width yet blocks the queue until capacity
    /// frees up (`Idle`), keeping wide tasks from starving.
    pub fn poll_launch(&mut self, shard: u32) -> Poll {
        let queue = &self.queues[shard as usize];
        let Some(&(depth, task)) = queue.iter().next() else {
            return Poll::Idle;
        };
        let width = self.graph.task(task).expect("queued task exists").width;
        match self.pool.allocate(task, width) {
            Ok(nodes) => {
                self.queues[shard as usize].remove(&(depth, task));
                self.graph.start_task(task).expect("queued task is ready");
                self.running.insert(task, nodes.clone());
                Poll::Launch(Launch {
                    task,
                    nodes,
                    shard,
                    attempt: self.attempt(task),
                })
            }
            Err(AllocError::Unavailable { .. }) => Poll::Idle,
            Err(AllocError::Config { width, pool }) => {
                self.queues[shard as usize].remove(&(depth, task));
                self.abandoned.insert(task);
                Poll::ConfigFail { task, width, pool }
            }
        }
    }

    /// Record a finished task: set its outputs, free its nodes, route
    /// notifications and newly-ready tasks to their owner shards.
    pub fn on_complete(
        &mut self,
        task: TaskId,
        outs: &BTreeMap<FutureId, ArtifactRef>,
    ) -> Result<CompletionEffects, GraphError> {
        let newly_ready = self.graph.complete_task(task, outs)?;
        self.pool.release(task);
        self.running.remove(&task);

        let mut notifications = Vec::new();
        let outputs = self.graph.task(task)?.outputs.clone();
        for f in outputs {
            let cell = self.graph.future(f);
            let shards: BTreeSet<u32> =
                cell.consumers.iter().map(|c| self.plan.owner(*c)).collect();
            let name = cell.name.clone();
            for s in shards {
                if self.delivered.insert((f, s)) {
                    notifications.push(Notification {
                        future: f,
                        name: name.clone(),
                        shard: s,
                    });
                }
            }
        }
        let queued = newly_ready.into_iter().map(|t| self.enqueue(t)).collect();
        Ok(CompletionEffects {
            notifications,
            queued,
        })
    }

    /// Record a task failure (nonzero exit, missing output, staging
    /// error). Within budget the task re-queues; beyond it, it is
    /// permanently failed.
    pub fn on_task_failed(&mut self, task: TaskId) -> Result<FailureOutcome, GraphError> {
        self.pool.release(task);
        self.running.remove(&task);
        let attempt = self.attempts.entry(task).or_insert(0);
        *attempt += 1;
        let attempt = *attempt;
        if attempt > self.policy.max_retries {
            self.graph.fail_task(task)?;
            self.abandoned.insert(task);
            Ok(FailureOutcome::Abandoned { attempt })
        } else {
            self.graph.revert_running(task)?;
            self.enqueue(task);
            Ok(FailureOutcome::Retry { attempt })
        }
    }

    /// Remove a dead node from the pool. The task running on it (if any)
    /// reverts and follows the retry policy. Loss of stored artifacts is
    /// the data plane's problem — see `on_artifact_lost`.
    pub fn on_node_failed(&mut self, node: NodeId) -> Vec<(TaskId, FailureOutcome)> {
        let Some(victim) = self.pool.fail_node(node) else {
            return Vec::new();
        };
        let outcome = self
            .on_task_failed(victim)
            .expect("victim task was running");
        vec![(victim, outcome)]
    }

    /// A done task's output no longer exists anywhere (its only copies
    /// were volatile, on nodes now dead). Re-queue the producer to
    /// regenerate it; the re-run consumes retry budget.
    ///
    /// Returns `None` when no re-queue is needed: the producer is
    /// already pending or running again, so one re-run will restore
    /// every output it owns.
    pub fn on_artifact_lost(
        &mut self,
        producer: TaskId,
    ) -> Result<Option<FailureOutcome>, GraphError> {
        if self.graph.status(producer)? != TaskStatus::Done {
            return Ok(None);
        }
        self.graph.revert_done_task(producer)?;
        let attempt = self.attempts.entry(producer).or_insert(0);
        *attempt += 1;
        let attempt = *attempt;
        if attempt > self.policy.max_retries {
            self.abandoned.insert(producer);
            Ok(Some(FailureOutcome::Abandoned { attempt }))
        } else {
            self.enqueue(producer);
            Ok(Some(FailureOutcome::Retry { attempt }))
        }
    }

    /// Park a running task whose input content is temporarily
    /// unreadable (its producer is being re-run after volatile loss).
    /// Costs no retry budget; the task is not re-queued — call
    /// `requeue` once the missing artifact is back.
    pub fn defer_staged(&mut self, task: TaskId) -> Result<(), GraphError> {
        self.pool.release(task);
        self.running.remove(&task);
        self.graph.revert_running(task)
    }

    /// Put a parked pending task back on its owner shard's queue.
    pub fn requeue(&mut self, task: TaskId) -> Result<Queued, GraphError> {
        if self.graph.status(task)? != TaskStatus::Pending {
            return Err(GraphError::NotReady { task });
        }
        Ok(self.enqueue(task))
    }

    /// True when no queue can make progress: nothing running, nothing
    /// launchable, but work remains queued or unfinished.
    pub fn is_stalled(&self) -> bool {
        if !self.running.is_empty() {
            return false;
        }
        for q in &self.queues {
            if let Some(&(_, task)) = q.iter().next() {
                let width = self.graph.task(task).expect("queued").width;
                // with nothing running every live node is free
                if width <= self.pool.live_count() {
                    return false;
                }
            }
        }
        self.queued_count() > 0 || self.graph.has_live_work()
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_empty() && self.queued_count() == 0
    }

    pub fn verdict(&self) -> Quiescence {
        self.graph.check_quiescence()
    }
}
