//! Expansion of a lowered program into a concrete dataflow graph.
//!
//! This is where foreach loops unroll: every iteration of every call site
//! becomes one task, every file variable (or array element) it touches
//! becomes one future. Index expressions are evaluated against the live
//! loop environment, so writes through computed indices land on concrete
//! elements — and two iterations landing on the same element surface as a
//! double assignment here, not at run time.

use super::{DataflowGraph, FutureId, FutureKind, FutureValue, GraphBuilder, GraphError, Word};
use crate::datastore::{ArtifactRef, Persistence};
use crate::dsl::lower::{DCall, DStmt, DWord, DataflowProgram};
use crate::dsl::typecheck::{eval_texpr, ScalarValue, TArg, TExpr, TLValue, VarMapping};
use std::collections::BTreeMap;

/// Expand `prog` into a graph, binding external inputs from `bindings`
/// (keyed by variable name, e.g. `cont0` or `pin[3]`).
///
/// A consumed future no task produces is resolved in this order: a
/// binding if one is given; otherwise a placeholder value carrying the
/// variable's mapped path (size and digest zero — good enough for
/// validation and graph rendering, and replaced by real refs when a run
/// driver binds the actual file contents); otherwise the build fails
/// with the unbound futures listed.
pub fn instantiate(
    prog: &DataflowProgram,
    bindings: &BTreeMap<String, ArtifactRef>,
) -> Result<DataflowGraph, GraphError> {
    let mut cx = Instantiator {
        prog,
        builder: GraphBuilder::new(),
        env: BTreeMap::new(),
        loop_stack: Vec::new(),
    };
    cx.walk(&prog.body)?;
    let Instantiator { mut builder, .. } = cx;

    // resolve external inputs
    let externals: Vec<(FutureId, String, Option<String>, bool)> = builder
        .unproduced()
        .map(|c| (c.id, c.name.clone(), c.artifact_hint.clone(), c.volatile))
        .collect();
    for (id, name, hint, volatile) in externals {
        if let Some(artifact) = bindings.get(&name) {
            builder.bind_external(id, FutureValue::File(artifact.clone()))?;
        } else if let Some(path) = hint {
            let persistence = if volatile {
                Persistence::Volatile
            } else {
                Persistence::Persistent
            };
            builder.bind_external(
                id,
                FutureValue::File(ArtifactRef {
                    name: path,
                    size: 0,
                    digest: 0,
                    persistence,
                    locations: Default::default(),
                }),
            )?;
        }
        // otherwise leave unbound; build() reports it
    }
    builder.build()
}

struct Instantiator<'a> {
    prog: &'a DataflowProgram,
    builder: GraphBuilder,
    env: BTreeMap<String, i64>,
    /// Current loop-variable values, for task instance names.
    loop_stack: Vec<i64>,
}

impl Instantiator<'_> {
    fn walk(&mut self, body: &[DStmt]) -> Result<(), GraphError> {
        for stmt in body {
            match stmt {
                DStmt::Call(c) => self.expand_call(c)?,
                DStmt::Loop(l) => {
                    let values = l.range.values();
                    for (pos, val) in values.iter().enumerate() {
                        let saved_var = self.env.insert(l.var.clone(), *val);
                        let saved_ix = l
                            .index_var
                            .as_ref()
                            .map(|ix| (ix.clone(), self.env.insert(ix.clone(), pos as i64)));
                        self.loop_stack.push(*val);
                        let result = self.walk(&l.body);
                        self.loop_stack.pop();
                        match saved_var {
                            Some(v) => {
                                self.env.insert(l.var.clone(), v);
                            }
                            None => {
                                self.env.remove(&l.var);
                            }
                        }
                        if let Some((ix, saved)) = saved_ix {
                            match saved {
                                Some(v) => {
                                    self.env.insert(ix, v);
                                }
                                None => {
                                    self.env.remove(&ix);
                                }
                            }
                        }
                        result?;
                    }
                }
            }
        }
        Ok(())
    }

    fn eval_int(&self, e: &TExpr, what: &str) -> Result<i64, GraphError> {
        match eval_texpr(e, &self.env) {
            Ok(ScalarValue::Int(v)) => Ok(v),
            Ok(other) => Err(GraphError::Eval {
                message: format!("{what} evaluated to a {}, expected an int", other.kind()),
            }),
            Err(message) => Err(GraphError::Eval { message }),
        }
    }

    /// Future for variable `name`, or element `name[idx]`.
    fn file_future(&mut self, name: &str, idx: Option<i64>) -> Result<FutureId, GraphError> {
        let var = &self.prog.vars[name];
        let key = match idx {
            Some(i) => {
                if i < 0 {
                    return Err(GraphError::NegativeIndex {
                        name: name.to_string(),
                        index: i,
                    });
                }
                format!("{name}[{i}]")
            }
            None => name.to_string(),
        };
        let id = self.builder.future(&key, FutureKind::File, var.volatile);
        match (&var.mapping, idx) {
            (Some(VarMapping::Single(path)), None) => {
                self.builder.set_artifact_hint(id, path.clone());
            }
            (Some(VarMapping::Indexed { prefix, suffix }), Some(i)) => {
                self.builder.set_artifact_hint(id, format!("{prefix}{i}{suffix}"));
            }
            _ => {}
        }
        Ok(id)
    }

    fn expand_call(&mut self, call: &DCall) -> Result<(), GraphError> {
        let sig = &self.prog.apps[&call.app];

        // outputs, with app parameter names for generated artifact paths
        let mut outputs = Vec::with_capacity(call.outs.len());
        for (i, out) in call.outs.iter().enumerate() {
            let id = match out {
                TLValue::Var(n) => self.file_future(n, None)?,
                TLValue::Elem(n, e) => {
                    let idx = self.eval_int(e, &format!("index into `{n}`"))?;
                    self.file_future(n, Some(idx))?
                }
            };
            outputs.push((id, sig.outputs[i].name.clone()));
        }

        // arguments: scalar words fold to literals, file args collect
        // input futures and remember which slice of the input list each
        // argument occupies
        let mut inputs: Vec<FutureId> = Vec::new();
        let mut scalar_words: Vec<Option<String>> = Vec::with_capacity(call.args.len());
        let mut file_ranges: Vec<Option<std::ops::Range<usize>>> =
            Vec::with_capacity(call.args.len());
        for arg in &call.args {
            match arg {
                TArg::Scalar(e) => {
                    let v = eval_texpr(e, &self.env)
                        .map_err(|message| GraphError::Eval { message })?;
                    scalar_words.push(Some(v.to_word()));
                    file_ranges.push(None);
                }
                TArg::FileVar(n) => {
                    let start = inputs.len();
                    inputs.push(self.file_future(n, None)?);
                    scalar_words.push(None);
                    file_ranges.push(Some(start..inputs.len()));
                }
                TArg::FileElem(n, e) => {
                    let idx = self.eval_int(e, &format!("index into `{n}`"))?;
                    let start = inputs.len();
                    inputs.push(self.file_future(n, Some(idx))?);
                    scalar_words.push(None);
                    file_ranges.push(Some(start..inputs.len()));
                }
                TArg::FileSlice(n, lo_e, hi_e) => {
                    let lo = self.eval_int(lo_e, &format!("slice bound of `{n}`"))?;
                    let hi = self.eval_int(hi_e, &format!("slice bound of `{n}`"))?;
                    let start = inputs.len();
                    for i in lo..=hi {
                        inputs.push(self.file_future(n, Some(i))?);
                    }
                    scalar_words.push(None);
                    file_ranges.push(Some(start..inputs.len()));
                }
            }
        }

        let command: Vec<Word> = call
            .command
            .iter()
            .map(|w| match w {
                DWord::Lit(s) => Word::Lit(s.clone()),
                DWord::Scalar(i) => Word::Lit(scalar_words[*i].clone().expect("scalar arg")),
                DWord::FileIn(i) => Word::Inputs(file_ranges[*i].clone().expect("file arg")),
                DWord::FileOut(i) => Word::Output(*i),
            })
            .collect();

        let name = if self.loop_stack.is_empty() {
            format!("{}@{}", call.app, call.site)
        } else {
            let vals: Vec<String> = self.loop_stack.iter().map(|v| v.to_string()).collect();
            format!("{}@{}[{}]", call.app, call.site, vals.join(","))
        };
        self.builder.task_named_outputs(
            &name,
            &call.app,
            command,
            inputs,
            outputs,
            call.width,
            call.duration,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::Producer;
    use crate::dsl::{lower::lower, parse, typecheck::typecheck};
    use crate::hash::fnv1a;

    fn program(src: &str) -> DataflowProgram {
        lower(&typecheck(&parse(src).unwrap()).unwrap())
    }

    fn graph(src: &str) -> Result<DataflowGraph, GraphError> {
        instantiate(&program(src), &BTreeMap::new())
    }

    #[test]
    fn two_stage_pipeline_is_two_tasks_three_futures() {
        let g = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile y <\"mid.dat\">;\nfile z <\"out.dat\">;\n\
             (y) = f(x);\n(z) = f(y);\n",
        )
        .unwrap();
        assert_eq!(g.task_count(), 2);
        assert_eq!(g.future_count(), 3);
        let x = g.future_by_name("x").unwrap();
        assert_eq!(x.producer, Some(Producer::External));
        assert_eq!(x.artifact_hint.as_deref(), Some("in.dat"));
        assert_eq!(g.ready_tasks().len(), 1);

        // the task command resolves against mapped paths
        let t0 = g.tasks().next().unwrap();
        let words = t0.resolve_command(
            |_, f| g.future(f).artifact_hint.clone().unwrap(),
            |_, f| g.future(f).artifact_hint.clone().unwrap(),
        );
        assert_eq!(words, vec!["cp", "in.dat", "mid.dat"]);
    }

    #[test]
    fn foreach_expands_to_one_task_per_iteration() {
        let g = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile a[] <\"out_\", \".dat\">;\n\
             foreach t in [0:9] {\n  (a[t]) = f(x);\n}\n",
        )
        .unwrap();
        assert_eq!(g.task_count(), 10);
        // one shared input future + ten outputs
        assert_eq!(g.future_count(), 11);
        assert_eq!(g.future_by_name("x").unwrap().consumers.len(), 10);
        assert_eq!(
            g.future_by_name("a[7]").unwrap().artifact_hint.as_deref(),
            Some("out_7.dat")
        );
        // everything is ready at once: maximum implicit parallelism
        assert_eq!(g.ready_tasks().len(), 10);
    }

    #[test]
    fn computed_indices_land_on_concrete_elements() {
        let g = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile a[];\nfile y <\"y.dat\">;\n\
             app (file o) m(file ps[]) { \"merge\" ps o }\n\
             foreach t, i in [2, 4, 6] {\n  (a[t * 10 + i]) = f(x);\n}\n\
             (y) = m(a[20:22]);\n",
        );
        // t=2,i=0 -> a[20]; t=4,i=1 -> a[41]; t=6,i=2 -> a[62]
        let g = g.unwrap_err();
        // a[21], a[22] are consumed but never produced
        match g {
            GraphError::UnboundInput { names } => {
                assert_eq!(names, vec!["a[21]".to_string(), "a[22]".to_string()]);
            }
            other => panic!("expected unbound elements, got {other:?}"),
        }
    }

    #[test]
    fn dynamic_double_assignment_is_caught() {
        let err = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile a[];\nfile sink <\"s\">;\n\
             app (file o) m(file ps[]) { \"merge\" ps o }\n\
             foreach t in [0:1] {\n  (a[t]) = f(x);\n  (a[1 - t]) = f(x);\n}\n\
             (sink) = m(a[0:1]);\n",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::DoubleAssign { name } if name == "a[1]"));
    }

    #[test]
    fn cycles_are_named() {
        let err = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x;\nfile y;\n(y) = f(x);\n(x) = f(y);\n",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Cycle { .. }));
    }

    #[test]
    fn bindings_override_mapped_placeholders() {
        let prog = program(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile y <\"out.dat\">;\n(y) = f(x);\n",
        );
        let real = ArtifactRef {
            name: "in.dat".into(),
            size: 42,
            digest: fnv1a(b"content"),
            persistence: Persistence::Persistent,
            locations: Default::default(),
        };
        let g = instantiate(&prog, &BTreeMap::from([("x".to_string(), real.clone())])).unwrap();
        let bound = g.external_bindings();
        assert_eq!(bound.len(), 1);
        assert_eq!(bound[0].1, &real);

        // without the binding, a zero-digest placeholder stands in
        let g2 = instantiate(&prog, &BTreeMap::new()).unwrap();
        assert_eq!(g2.external_bindings()[0].1.digest, 0);
    }

    #[test]
    fn negative_index_is_rejected() {
        let err = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile a[];\nfile s <\"s\">;\n\
             app (file o) m(file ps[]) { \"merge\" ps o }\n\
             foreach t in [0:3] {\n  (a[t - 2]) = f(x);\n}\n\
             (s) = m(a[0:1]);\n",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::NegativeIndex { index: -2, .. }));
    }

    #[test]
    fn division_by_zero_in_an_index_is_an_eval_error() {
        let err = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile a[] <\"a_\", \".dat\">;\n\
             foreach t in [0:2] {\n  (a[4 / t]) = f(x);\n}\n",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Eval { .. }));
    }

    #[test]
    fn annotations_reach_the_task_spec() {
        let g = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             file x <\"in.dat\">;\nfile y <\"y.dat\">;\n\
             (y) = f(x) @duration(2.5) @width(4);\n",
        )
        .unwrap();
        let t = g.tasks().next().unwrap();
        assert_eq!(t.duration, Some(2.5));
        assert_eq!(t.width, 4);
    }

    #[test]
    fn slices_expand_in_index_order() {
        let g = graph(
            "type file;\napp (file o) f(file i) { \"cp\" i o }\n\
             app (file o) m(file ps[]) { \"merge\" ps o }\n\
             file x <\"in.dat\">;\nfile a[] <\"a_\", \".dat\">;\nfile y <\"y.dat\">;\n\
             foreach t in [0:2] {\n  (a[t]) = f(x);\n}\n\
             (y) = m(a[0:2]);\n",
        )
        .unwrap();
        let merge = g.tasks().find(|t| t.app == "m").unwrap();
        assert_eq!(merge.inputs.len(), 3);
        let words = merge.resolve_command(
            |_, f| g.future(f).name.clone(),
            |_, f| g.future(f).name.clone(),
        );
        assert_eq!(words, vec!["merge", "a[0]", "a[1]", "a[2]", "y"]);
        assert_eq!(g.depth(merge.id).unwrap(), 2);
    }

    #[test]
    fn scalar_arguments_become_command_literals() {
        let g = graph(
            "type file;\napp (file o) f(file i, int n) { \"prog\" \"-n\" n i o }\n\
             file x <\"in.dat\">;\nfile a[] <\"a_\", \".dat\">;\n\
             foreach t in [0:1] {\n  (a[t]) = f(x, t * 10);\n}\n",
        )
        .unwrap();
        let words: Vec<Vec<String>> = g
            .tasks()
            .map(|t| {
                t.resolve_command(
                    |_, f| g.future(f).name.clone(),
                    |_, f| g.future(f).name.clone(),
                )
            })
            .collect();
        assert_eq!(words[0], vec!["prog", "-n", "0", "x", "a[0]"]);
        assert_eq!(words[1], vec!["prog", "-n", "10", "x", "a[1]"]);
    }
}
