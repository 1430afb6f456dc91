fn main() {
    std::process::exit(blirp::cli::main_with_args(std::env::args_os()));
}
