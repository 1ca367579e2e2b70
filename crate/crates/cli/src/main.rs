fn main() {
    std::process::exit(ccg_cli::main_with_args(std::env::args_os()));
}
