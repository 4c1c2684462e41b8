fn main() {
    std::process::exit(ivs_cli::main_with_args(std::env::args_os()));
}
