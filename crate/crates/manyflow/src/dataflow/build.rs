//! Graph construction and structural validation.

use super::{
    DataflowGraph, FutureCell, FutureId, FutureKind, FutureValue, GraphError, Producer, TaskId,
    TaskNode, TaskSpec, TaskStatus, Word,
};
use crate::datastore::Persistence;
use std::collections::{BTreeMap, BTreeSet};

/// Accumulates futures and tasks, then validates the whole structure in
/// one `build` pass: every output future single-assigned, no cycles,
/// no consumed-but-never-produced futures, topological depths computed.
pub struct GraphBuilder {
    futures: Vec<FutureCell>,
    tasks: Vec<TaskSpec>,
    by_name: BTreeMap<String, FutureId>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            futures: Vec::new(),
            tasks: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Get or create the future named `name`.
    pub fn future(&mut self, name: &str, kind: FutureKind, volatile: bool) -> FutureId {
        if let Some(id) = self.by_name.get(name) {
            return *id;
        }
        let id = FutureId(self.futures.len() as u32);
        self.futures.push(FutureCell {
            id,
            name: name.to_string(),
            kind,
            volatile,
            artifact_hint: None,
            value: None,
            producer: None,
            consumers: BTreeSet::new(),
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn set_artifact_hint(&mut self, id: FutureId, hint: String) {
        self.futures[id.0 as usize].artifact_hint = Some(hint);
    }

    /// Futures no task produces and nothing has bound, in id order —
    /// the candidates for external binding.
    pub fn unproduced(&self) -> impl Iterator<Item = &FutureCell> {
        self.futures
            .iter()
            .filter(|c| c.producer.is_none() && c.value.is_none())
    }

    /// Bind a future to a value supplied from outside the graph.
    pub fn bind_external(&mut self, id: FutureId, value: FutureValue) -> Result<(), GraphError> {
        let cell = &mut self.futures[id.0 as usize];
        if cell.value.is_some() || matches!(cell.producer, Some(Producer::Task(_))) {
            return Err(GraphError::DoubleAssign {
                name: cell.name.clone(),
            });
        }
        cell.producer = Some(Producer::External);
        cell.value = Some(value);
        Ok(())
    }

    /// Add a task. Claims each output future for this task — a future
    /// two tasks try to produce is a double assignment caught here, which
    /// is how dynamically-indexed array writes stay single-assignment.
    #[allow(clippy::too_many_arguments)]
    pub fn task(
        &mut self,
        name: &str,
        app: &str,
        command: Vec<Word>,
        inputs: Vec<FutureId>,
        outputs: Vec<FutureId>,
        width: u32,
        duration: Option<f64>,
    ) -> Result<TaskId, GraphError> {
        self.task_named_outputs(
            name,
            app,
            command,
            inputs,
            outputs.iter().map(|f| (*f, format!("o{}", f.0))).collect(),
            width,
            duration,
        )
    }

    /// Like `task`, with an output-parameter name recorded per output
    /// future (feeds generated artifact names).
    #[allow(clippy::too_many_arguments)]
    pub fn task_named_outputs(
        &mut self,
        name: &str,
        app: &str,
        command: Vec<Word>,
        inputs: Vec<FutureId>,
        outputs: Vec<(FutureId, String)>,
        width: u32,
        duration: Option<f64>,
    ) -> Result<TaskId, GraphError> {
        if outputs.is_empty() {
            return Err(GraphError::EmptyOutputs { name: name.into() });
        }
        if width == 0 {
            return Err(GraphError::BadWidth { name: name.into() });
        }
        let out_set: BTreeSet<FutureId> = outputs.iter().map(|(f, _)| *f).collect();
        for f in &inputs {
            if out_set.contains(f) {
                return Err(GraphError::InputOutputOverlap {
                    name: name.into(),
                    future: self.futures[f.0 as usize].name.clone(),
                });
            }
        }
        let id = TaskId(self.tasks.len() as u32);
        for (f, _) in &outputs {
            let cell = &mut self.futures[f.0 as usize];
            if cell.producer.is_some() || cell.value.is_some() {
                return Err(GraphError::DoubleAssign {
                    name: cell.name.clone(),
                });
            }
            cell.producer = Some(Producer::Task(id));
        }
        for f in &inputs {
            self.futures[f.0 as usize].consumers.insert(id);
        }
        let persistence = if outputs.iter().any(|(f, _)| !self.futures[f.0 as usize].volatile) {
            Persistence::Persistent
        } else {
            Persistence::Volatile
        };
        self.tasks.push(TaskSpec {
            id,
            name: name.to_string(),
            app: app.to_string(),
            command,
            inputs,
            output_names: outputs.iter().map(|(_, n)| n.clone()).collect(),
            outputs: outputs.into_iter().map(|(f, _)| f).collect(),
            width,
            persistence,
            duration,
        });
        Ok(id)
    }

    /// Validate and freeze. Errors: `UnboundInput` for futures nobody
    /// produces or binds, `Cycle` naming one dependency cycle.
    pub fn build(self) -> Result<DataflowGraph, GraphError> {
        let GraphBuilder {
            futures,
            tasks,
            by_name,
        } = self;

        let unbound: Vec<String> = futures
            .iter()
            .filter(|c| c.producer.is_none() && c.value.is_none())
            .map(|c| c.name.clone())
            .collect();
        if !unbound.is_empty() {
            return Err(GraphError::UnboundInput { names: unbound });
        }

        // Kahn's algorithm over task→task edges (via shared futures),
        // computing depths; leftovers are on cycles.
        let n = tasks.len();
        let mut indegree: Vec<u32> = vec![0; n];
        let mut distinct_unset: Vec<u32> = vec![0; n];
        for t in &tasks {
            let distinct: BTreeSet<FutureId> = t.inputs.iter().copied().collect();
            for f in &distinct {
                let cell = &futures[f.0 as usize];
                if let Some(Producer::Task(_)) = cell.producer {
                    indegree[t.id.0 as usize] += 1;
                }
                if cell.value.is_none() {
                    distinct_unset[t.id.0 as usize] += 1;
                }
            }
        }
        let mut depth: Vec<u32> = vec![1; n];
        let mut queue: Vec<TaskId> = (0..n as u32)
            .map(TaskId)
            .filter(|t| indegree[t.0 as usize] == 0)
            .collect();
        let mut processed = 0usize;
        let mut head = 0usize;
        while head < queue.len() {
            let t = queue[head];
            head += 1;
            processed += 1;
            let d = depth[t.0 as usize];
            for f in &tasks[t.0 as usize].outputs {
                let consumers: Vec<TaskId> = futures[f.0 as usize].consumers.iter().copied().collect();
                for c in consumers {
                    let ci = c.0 as usize;
                    depth[ci] = depth[ci].max(d + 1);
                    indegree[ci] -= 1;
                    if indegree[ci] == 0 {
                        queue.push(c);
                    }
                }
            }
        }
        if processed < n {
            return Err(GraphError::Cycle {
                names: find_cycle(&tasks, &futures),
            });
        }

        let nodes = tasks
            .into_iter()
            .map(|spec| {
                let id = spec.id.0 as usize;
                TaskNode {
                    spec,
                    status: TaskStatus::Pending,
                    unset_inputs: distinct_unset[id],
                    depth: depth[id],
                    recompleting: false,
                }
            })
            .collect();
        Ok(DataflowGraph {
            futures,
            tasks: nodes,
            by_name,
        })
    }
}

/// Walk producer edges from some on-cycle task until a task repeats,
/// then return the loop's task names in dependency order.
fn find_cycle(tasks: &[TaskSpec], futures: &[FutureCell]) -> Vec<String> {
    // A task is on or downstream-blocked-by a cycle iff Kahn never
    // processed it; retrace from any task with an unprocessed producer.
    let producer_of = |t: &TaskSpec| -> Vec<TaskId> {
        t.inputs
            .iter()
            .filter_map(|f| match futures[f.0 as usize].producer {
                Some(Producer::Task(p)) => Some(p),
                _ => None,
            })
            .collect()
    };
    // Iterative DFS with colors to find a back edge.
    let n = tasks.len();
    let mut color = vec![0u8; n]; // 0 white, 1 gray, 2 black
    let mut parent: Vec<Option<TaskId>> = vec![None; n];
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut stack = vec![(TaskId(start as u32), 0usize)];
        color[start] = 1;
        while let Some((t, i)) = stack.pop() {
            let preds = producer_of(&tasks[t.0 as usize]);
            if i < preds.len() {
                stack.push((t, i + 1));
                let p = preds[i];
                match color[p.0 as usize] {
                    0 => {
                        color[p.0 as usize] = 1;
                        parent[p.0 as usize] = Some(t);
                        stack.push((p, 0));
                    }
                    1 => {
                        // back edge t -> p closes a cycle; the parent
                        // chain from t down to p lists it in execution
                        // order p, t, ..., p
                        let mut names = vec![tasks[p.0 as usize].name.clone()];
                        let mut cur = t;
                        while cur != p {
                            names.push(tasks[cur.0 as usize].name.clone());
                            cur = match parent[cur.0 as usize] {
                                Some(q) => q,
                                None => break,
                            };
                        }
                        names.push(tasks[p.0 as usize].name.clone());
                        return names;
                    }
                    _ => {}
                }
            } else {
                color[t.0 as usize] = 2;
            }
        }
    }
    vec!["<unlocated>".into()]
}

#[cfg(test)]
mod tests {
    use super::super::tests::artifact;
    use super::*;

    fn cmd() -> Vec<Word> {
        vec![Word::Lit("noop".into()), Word::Output(0)]
    }

    #[test]
    fn two_producers_for_one_future_is_double_assignment() {
        let mut b = GraphBuilder::new();
        let x = b.future("x", FutureKind::File, false);
        let y = b.future("y", FutureKind::File, false);
        b.task("A", "noop", cmd(), vec![], vec![y], 1, None).unwrap();
        let err = b.task("B", "noop", cmd(), vec![x], vec![y], 1, None).unwrap_err();
        assert!(matches!(err, GraphError::DoubleAssign { name } if name == "y"));
    }

    #[test]
    fn binding_a_produced_future_is_double_assignment() {
        let mut b = GraphBuilder::new();
        let y = b.future("y", FutureKind::File, false);
        b.task("A", "noop", cmd(), vec![], vec![y], 1, None).unwrap();
        assert!(matches!(
            b.bind_external(y, FutureValue::File(artifact("y"))),
            Err(GraphError::DoubleAssign { .. })
        ));
    }

    #[test]
    fn cycle_is_reported_with_its_member_tasks() {
        // (y) = f(x); (x) = g(y)
        let mut b = GraphBuilder::new();
        let x = b.future("x", FutureKind::File, false);
        let y = b.future("y", FutureKind::File, false);
        b.task(
            "f",
            "noop",
            vec![Word::Lit("noop".into()), Word::Inputs(0..1), Word::Output(0)],
            vec![x],
            vec![y],
            1,
            None,
        )
        .unwrap();
        b.task(
            "g",
            "noop",
            vec![Word::Lit("noop".into()), Word::Inputs(0..1), Word::Output(0)],
            vec![y],
            vec![x],
            1,
            None,
        )
        .unwrap();
        match b.build() {
            Err(GraphError::Cycle { names }) => {
                assert!(names.len() >= 3);
                assert_eq!(names.first(), names.last());
                assert!(names.contains(&"f".to_string()) && names.contains(&"g".to_string()));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn consumed_but_never_produced_future_is_unbound() {
        let mut b = GraphBuilder::new();
        let x = b.future("x", FutureKind::File, false);
        let y = b.future("y", FutureKind::File, false);
        b.task(
            "f",
            "noop",
            vec![Word::Lit("noop".into()), Word::Inputs(0..1), Word::Output(0)],
            vec![x],
            vec![y],
            1,
            None,
        )
        .unwrap();
        match b.build() {
            Err(GraphError::UnboundInput { names }) => assert_eq!(names, vec!["x".to_string()]),
            other => panic!("expected unbound input, got {other:?}"),
        }
    }

    #[test]
    fn tasks_must_have_outputs_and_width() {
        let mut b = GraphBuilder::new();
        let x = b.future("x", FutureKind::File, false);
        assert!(matches!(
            b.task("A", "noop", cmd(), vec![x], vec![], 1, None),
            Err(GraphError::EmptyOutputs { .. })
        ));
        let y = b.future("y", FutureKind::File, false);
        assert!(matches!(
            b.task("A", "noop", cmd(), vec![x], vec![y], 0, None),
            Err(GraphError::BadWidth { .. })
        ));
    }

    #[test]
    fn input_output_overlap_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.future("x", FutureKind::File, false);
        assert!(matches!(
            b.task("A", "noop", cmd(), vec![x], vec![x], 1, None),
            Err(GraphError::InputOutputOverlap { .. })
        ));
    }

    #[test]
    fn duplicate_input_counts_once_for_readiness() {
        let mut b = GraphBuilder::new();
        let x = b.future("x", FutureKind::File, false);
        let y = b.future("y", FutureKind::File, false);
        let t = b
            .task(
                "f",
                "noop",
                vec![Word::Lit("noop".into()), Word::Inputs(0..2), Word::Output(0)],
                vec![x, x],
                vec![y],
                1,
                None,
            )
            .unwrap();
        b.bind_external(x, FutureValue::File(artifact("x"))).unwrap();
        let g = b.build().unwrap();
        assert!(g.is_ready(t), "x listed twice must not double-count");
    }

    #[test]
    fn depths_follow_longest_path() {
        // seed -> A -> B -> C, plus A -> C directly: C sits at depth 3
        let mut b = GraphBuilder::new();
        let seed = b.future("seed", FutureKind::File, false);
        let fa = b.future("a", FutureKind::File, false);
        let fb = b.future("b", FutureKind::File, false);
        let fc = b.future("c", FutureKind::File, false);
        let pass = |ins: usize| {
            let mut v = vec![Word::Lit("noop".into())];
            v.push(Word::Inputs(0..ins));
            v.push(Word::Output(0));
            v
        };
        let ta = b.task("A", "noop", pass(1), vec![seed], vec![fa], 1, None).unwrap();
        let tb = b.task("B", "noop", pass(1), vec![fa], vec![fb], 1, None).unwrap();
        let tc = b.task("C", "noop", pass(2), vec![fb, fa], vec![fc], 1, None).unwrap();
        b.bind_external(seed, FutureValue::File(artifact("seed"))).unwrap();
        let g = b.build().unwrap();
        assert_eq!(g.depth(ta).unwrap(), 1);
        assert_eq!(g.depth(tb).unwrap(), 2);
        assert_eq!(g.depth(tc).unwrap(), 3);
    }
}
