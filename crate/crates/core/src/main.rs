fn main() {
    std::process::exit(posjump::cli::main_with_args(std::env::args_os()));
}
