fn main() {
    std::process::exit(cgp::cli::main_with_args(std::env::args_os()));
}
