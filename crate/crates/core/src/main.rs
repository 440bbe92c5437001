fn main() {
    std::process::exit(convad::cli::main_with_args(std::env::args_os()));
}
