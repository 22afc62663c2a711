fn main() {
    std::process::exit(ringsource::cli::main_with_args(std::env::args_os()));
}
