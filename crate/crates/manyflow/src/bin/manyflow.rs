fn main() {
    std::process::exit(manyflow::cli::main());
}
