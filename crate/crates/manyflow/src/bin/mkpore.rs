//! Stub subproblem extractor: `mkpore <index> <in> <out>`.

use std::process::exit;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [index, input, output] = args.as_slice() else {
        eprintln!("usage: mkpore <index> <in> <out>");
        exit(2);
    };
    let idx: i64 = match index.parse() {
        Ok(v) => v,
        Err(_) => {
            eprintln!("mkpore: bad index `{index}`");
            exit(2);
        }
    };
    let bytes = match std::fs::read(input) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("mkpore: {input}: {e}");
            exit(1);
        }
    };
    if let Err(e) = std::fs::write(output, manyflow::stubapps::mkpore(idx, &bytes)) {
        eprintln!("mkpore: {output}: {e}");
        exit(1);
    }
}
