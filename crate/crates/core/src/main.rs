fn main() {
    std::process::exit(causal_core::cli::run(std::env::args_os()));
}
