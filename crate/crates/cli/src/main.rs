fn main() {
    std::process::exit(lhvdyn_cli::main_with_args(std::env::args_os()));
}
