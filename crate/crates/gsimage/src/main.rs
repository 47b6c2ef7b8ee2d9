fn main() {
    std::process::exit(gsimage::cli::main_with_args(std::env::args().collect()));
}
