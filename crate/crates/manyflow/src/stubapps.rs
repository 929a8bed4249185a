//! Deterministic stand-in applications for the example pipelines.
//!
//! Each function here is the single source of truth for one stub program's
//! output bytes. The `src/bin/` executables call these over real files; the
//! simulator calls them in memory. Keeping both paths on the same pure
//! functions is what makes simulated and local runs produce byte-identical
//! artifacts for the same script.

use crate::hash::fnv1a;

/// Continuum transport step: advance a continuum state file.
pub fn ctm(input: &[u8]) -> Vec<u8> {
    format!("continuum {:016x}\n", fnv1a(input)).into_bytes()
}

/// Extract pore-scale subproblem `index` from a continuum state.
pub fn mkpore(index: i64, input: &[u8]) -> Vec<u8> {
    format!("sample {index} {:016x}\n", fnv1a(input)).into_bytes()
}

/// Run one pore-scale simulation.
pub fn pore(input: &[u8]) -> Vec<u8> {
    format!("pore {:016x}\n", fnv1a(input)).into_bytes()
}

/// Merge pore-scale results back into a continuum state. Part order matters
/// and is fixed by the caller's argument order.
pub fn merge(base: &[u8], parts: &[&[u8]]) -> Vec<u8> {
    let mut h = fnv1a(base);
    for p in parts {
        let mut buf = h.to_be_bytes().to_vec();
        buf.extend_from_slice(p);
        h = fnv1a(&buf);
    }
    format!("continuum {h:016x}\n").into_bytes()
}

/// Output for an unrecognized program name: deterministic in the program
/// word, scalar words, input bytes, and output position.
pub fn synth(program: &str, scalars: &[String], inputs: &[&[u8]], out_index: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(program.as_bytes());
    for s in scalars {
        buf.push(0);
        buf.extend_from_slice(s.as_bytes());
    }
    for i in inputs {
        buf.push(1);
        buf.extend_from_slice(i);
    }
    buf.push(2);
    buf.extend_from_slice(&(out_index as u64).to_be_bytes());
    format!("out {program} {:016x}\n", fnv1a(&buf)).into_bytes()
}

/// In-memory evaluation used by the simulator. `scalars` are the non-file
/// command words after the program name, `inputs` the input artifact bytes
/// in command-line order. Returns one byte vector per output, in output
/// order. Must stay in lockstep with the `src/bin/` executables.
pub fn eval(program: &str, scalars: &[String], inputs: &[&[u8]], n_outputs: usize) -> Vec<Vec<u8>> {
    match (program, inputs, n_outputs) {
        ("ctm", [input], 1) => vec![ctm(input)],
        ("mkpore", [input], 1) => {
            let idx: i64 = scalars.first().and_then(|s| s.parse().ok()).unwrap_or(0);
            vec![mkpore(idx, input)]
        }
        ("pore", [input], 1) => vec![pore(input)],
        ("merge", [base, parts @ ..], 1) => vec![merge(base, parts)],
        ("noop", _, _) => vec![Vec::new(); n_outputs],
        _ => (0..n_outputs)
            .map(|i| synth(program, scalars, inputs, i))
            .collect(),
    }
}
