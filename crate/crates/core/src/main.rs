fn main() {
    std::process::exit(clueassign::harness::cli::main_with_args(std::env::args_os()));
}
