fn main() {
    std::process::exit(semcom::cli::main_with_args(std::env::args_os()));
}
