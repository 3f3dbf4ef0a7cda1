fn main() {
    std::process::exit(g2l_cli::run_with_args(std::env::args_os()));
}
