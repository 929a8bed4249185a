//! Stub continuum transport model: `ctm <in> <out>`.

use std::process::exit;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output] = args.as_slice() else {
        eprintln!("usage: ctm <in> <out>");
        exit(2);
    };
    let bytes = match std::fs::read(input) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("ctm: {input}: {e}");
            exit(1);
        }
    };
    if let Err(e) = std::fs::write(output, manyflow::stubapps::ctm(&bytes)) {
        eprintln!("ctm: {output}: {e}");
        exit(1);
    }
}
