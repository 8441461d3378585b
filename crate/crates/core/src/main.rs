fn main() {
    std::process::exit(mspl::cli::main_with_args(std::env::args_os()));
}
