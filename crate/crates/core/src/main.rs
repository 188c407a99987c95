fn main() {
    std::process::exit(consensus_chains::cli::main_with_args(std::env::args_os()));
}
