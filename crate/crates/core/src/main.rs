fn main() {
    std::process::exit(hopfdde::cli::main_with_args(std::env::args_os()));
}
