fn main() {
    std::process::exit(suffx_cli::main_with_args(std::env::args_os()));
}
