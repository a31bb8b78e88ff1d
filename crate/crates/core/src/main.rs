fn main() {
    std::process::exit(pnpmri::cli::main_with_args(std::env::args_os()));
}
