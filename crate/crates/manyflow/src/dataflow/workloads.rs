//! Synthetic graph families for benchmarks and stress tests.
//!
//! These are built directly against [`GraphBuilder`], bypassing the DSL,
//! so graph size is bounded by memory rather than script parsing.

use super::{DataflowGraph, FutureKind, FutureValue, GraphBuilder, Word};
use crate::datastore::ArtifactRef;
use crate::hash::fnv1a;

/// A generated graph plus the seed artifacts a driver must place in the
/// store before running (name → content).
pub struct Workload {
    pub graph: DataflowGraph,
    pub seeds: Vec<(String, Vec<u8>)>,
}

const SEED_CONTENT: &[u8] = b"seed\n";

fn seed_ref(name: &str) -> ArtifactRef {
    ArtifactRef {
        name: name.to_string(),
        size: SEED_CONTENT.len() as u64,
        digest: fnv1a(SEED_CONTENT),
        persistence: crate::datastore::Persistence::Persistent,
        locations: Default::default(),
    }
}

fn noop_cmd(outs: usize) -> Vec<Word> {
    let mut v = vec![Word::Lit("noop".into())];
    for i in 0..outs {
        v.push(Word::Output(i));
    }
    v
}

/// One seed, `n` independent single-output tasks. Maximum width, depth 1.
pub fn fanout(n: u32) -> Workload {
    let mut b = GraphBuilder::new();
    let seed = b.future("seed", FutureKind::File, false);
    b.set_artifact_hint(seed, "seed.dat".into());
    for i in 0..n {
        let out = b.future(&format!("out[{i}]"), FutureKind::File, false);
        b.task(&format!("f{i}"), "noop", noop_cmd(1), vec![seed], vec![out], 1, None)
            .unwrap();
    }
    b.bind_external(seed, FutureValue::File(seed_ref("seed.dat"))).unwrap();
    Workload {
        graph: b.build().unwrap(),
        seeds: vec![("seed.dat".into(), SEED_CONTENT.to_vec())],
    }
}

/// A single chain of `n` tasks. Maximum depth, width 1.
pub fn pipeline(n: u32) -> Workload {
    let mut b = GraphBuilder::new();
    let seed = b.future("seed", FutureKind::File, false);
    b.set_artifact_hint(seed, "seed.dat".into());
    let mut prev = seed;
    for i in 0..n {
        let out = b.future(&format!("x[{i}]"), FutureKind::File, false);
        b.task(
            &format!("s{i}"),
            "noop",
            noop_cmd(1),
            vec![prev],
            vec![out],
            1,
            None,
        )
        .unwrap();
        prev = out;
    }
    b.bind_external(seed, FutureValue::File(seed_ref("seed.dat"))).unwrap();
    Workload {
        graph: b.build().unwrap(),
        seeds: vec![("seed.dat".into(), SEED_CONTENT.to_vec())],
    }
}

/// `depth` stacked diamonds, each a fan-out to `width` tasks followed by
/// a join: repeated spread-and-collect, `depth * (width + 1)` tasks.
pub fn diamond_mesh(width: u32, depth: u32) -> Workload {
    assert!(width >= 1 && depth >= 1);
    let mut b = GraphBuilder::new();
    let seed = b.future("seed", FutureKind::File, false);
    b.set_artifact_hint(seed, "seed.dat".into());
    let mut head = seed;
    for d in 0..depth {
        let mut branch_outs = Vec::with_capacity(width as usize);
        for w in 0..width {
            let out = b.future(&format!("b[{d},{w}]"), FutureKind::File, false);
            b.task(
                &format!("d{d}.{w}"),
                "noop",
                noop_cmd(1),
                vec![head],
                vec![out],
                1,
                None,
            )
            .unwrap();
            branch_outs.push(out);
        }
        let joined = b.future(&format!("j[{d}]"), FutureKind::File, false);
        b.task(
            &format!("j{d}"),
            "noop",
            noop_cmd(1),
            branch_outs,
            vec![joined],
            1,
            None,
        )
        .unwrap();
        head = joined;
    }
    b.bind_external(seed, FutureValue::File(seed_ref("seed.dat"))).unwrap();
    Workload {
        graph: b.build().unwrap(),
        seeds: vec![("seed.dat".into(), SEED_CONTENT.to_vec())],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{Quiescence, TaskId};
    use crate::datastore::Persistence;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    #[test]
    fn shapes_have_expected_sizes() {
        let f = fanout(100);
        assert_eq!(f.graph.task_count(), 100);
        assert_eq!(f.graph.future_count(), 101);
        assert_eq!(f.graph.ready_tasks().len(), 100);

        let p = pipeline(50);
        assert_eq!(p.graph.task_count(), 50);
        assert_eq!(p.graph.ready_tasks().len(), 1);
        let last = p.graph.tasks().last().unwrap().id;
        assert_eq!(p.graph.depth(last).unwrap(), 50);

        let m = diamond_mesh(4, 3);
        assert_eq!(m.graph.task_count(), 3 * 5);
        assert_eq!(m.graph.future_count(), 1 + 3 * 5);
        let join = m.graph.tasks().last().unwrap();
        assert_eq!(join.inputs.len(), 4);
        assert_eq!(m.graph.depth(join.id).unwrap(), 6);
    }

    /// Deterministic stand-in for running a task: output digests are a
    /// pure function of the task name and its input digests.
    fn synth_outputs(
        g: &DataflowGraph,
        t: TaskId,
    ) -> BTreeMap<crate::dataflow::FutureId, ArtifactRef> {
        let spec = g.task(t).unwrap();
        let mut bytes: Vec<u8> = spec.name.as_bytes().to_vec();
        for f in &spec.inputs {
            let d = g
                .future(*f)
                .value
                .as_ref()
                .and_then(|v| v.as_artifact())
                .expect("input must be set")
                .digest;
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        let h = fnv1a(&bytes);
        spec.outputs
            .iter()
            .enumerate()
            .map(|(i, f)| {
                (
                    *f,
                    ArtifactRef {
                        name: g.future(*f).name.clone(),
                        size: 1,
                        digest: h.wrapping_add(i as u64),
                        persistence: Persistence::Persistent,
                        locations: Default::default(),
                    },
                )
            })
            .collect()
    }

    /// Drive the graph with a randomized scheduler: at each step either
    /// start a ready task or complete a running one, chosen by `seed`.
    fn run_random(graph: &DataflowGraph, seed: u64) -> BTreeMap<String, Option<u64>> {
        let mut g = graph.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut running: Vec<TaskId> = Vec::new();
        loop {
            let ready: Vec<TaskId> = g.ready_tasks().into_iter().collect();
            if ready.is_empty() && running.is_empty() {
                break;
            }
            let start = !ready.is_empty() && (running.is_empty() || rng.random_bool(0.5));
            if start {
                let t = ready[rng.random_range(0..ready.len())];
                g.start_task(t).unwrap();
                running.push(t);
            } else {
                let i = rng.random_range(0..running.len());
                let t = running.swap_remove(i);
                let outs = synth_outputs(&g, t);
                g.complete_task(t, &outs).unwrap();
            }
        }
        assert_eq!(g.check_quiescence(), Quiescence::Quiescent);
        g.final_values()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Any schedule that respects readiness yields the same values.
        #[test]
        fn completion_order_does_not_change_results(a: u64, b: u64) {
            let wl = diamond_mesh(3, 3);
            prop_assert_eq!(run_random(&wl.graph, a), run_random(&wl.graph, b));
        }

        #[test]
        fn fanout_results_are_schedule_independent(a: u64, b: u64) {
            let wl = fanout(40);
            prop_assert_eq!(run_random(&wl.graph, a), run_random(&wl.graph, b));
        }
    }
}
