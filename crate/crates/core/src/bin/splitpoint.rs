fn main() {
    std::process::exit(splitpoint_core::cli::main_with_args(std::env::args_os()));
}
