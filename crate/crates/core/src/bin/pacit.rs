fn main() {
    std::process::exit(pacit_core::cli::main_with_args(std::env::args_os()));
}
