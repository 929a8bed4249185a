//! Do-nothing task body for throughput measurement: `noop [out]...`.
//!
//! Creates each named output empty and exits. Kept as small as possible so
//! end-to-end task rates measure the engine, not the payload.

fn main() {
    for path in std::env::args().skip(1) {
        if let Err(e) = std::fs::write(&path, b"") {
            eprintln!("noop: {path}: {e}");
            std::process::exit(1);
        }
    }
}
