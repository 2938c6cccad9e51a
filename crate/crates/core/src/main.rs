fn main() {
    std::process::exit(sqrtgap::cli::main_with_args(std::env::args_os()));
}
