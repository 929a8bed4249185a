//! Stub merge step: `merge <base> <out> <part>...`.
//!
//! Parts come last so the argument list stays parseable when the part count
//! varies with the script's slice width.

use std::process::exit;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: merge <base> <out> <part>...");
        exit(2);
    }
    let read = |path: &String| match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("merge: {path}: {e}");
            exit(1);
        }
    };
    let base = read(&args[0]);
    let parts: Vec<Vec<u8>> = args[2..].iter().map(read).collect();
    let part_refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
    if let Err(e) = std::fs::write(&args[1], manyflow::stubapps::merge(&base, &part_refs)) {
        eprintln!("merge: {}: {e}", args[1]);
        exit(1);
    }
}
