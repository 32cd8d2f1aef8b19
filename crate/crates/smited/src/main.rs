fn main() {
    std::process::exit(smited::cli::main_with_args(std::env::args_os()));
}
