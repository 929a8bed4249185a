//! Graphviz export.

use super::DataflowGraph;
use std::fmt::Write;

/// Render the graph as DOT: tasks are boxes, futures are ellipses, and
/// every edge touching a volatile artifact is dashed. Output is fully
/// ordered by id, so identical graphs render byte-identically.
pub fn to_dot(graph: &DataflowGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph dataflow {{");
    let _ = writeln!(out, "  rankdir=LR;");
    for f in graph.futures() {
        let _ = writeln!(
            out,
            "  {} [shape=ellipse, label=\"{}\"];",
            f.id,
            escape(&f.name)
        );
    }
    for t in graph.tasks() {
        let _ = writeln!(out, "  {} [shape=box, label=\"{}\"];", t.id, escape(&t.name));
    }
    for t in graph.tasks() {
        let mut seen = std::collections::BTreeSet::new();
        for f in &t.inputs {
            if !seen.insert(*f) {
                continue;
            }
            let style = if graph.future(*f).volatile { " [style=dashed]" } else { "" };
            let _ = writeln!(out, "  {} -> {}{};", f, t.id, style);
        }
        for f in &t.outputs {
            let style = if graph.future(*f).volatile { " [style=dashed]" } else { "" };
            let _ = writeln!(out, "  {} -> {}{};", t.id, f, style);
        }
    }
    let _ = writeln!(out, "}}");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
