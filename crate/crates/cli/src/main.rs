fn main() {
    std::process::exit(ladder_cli::main_with_args(std::env::args_os()));
}
