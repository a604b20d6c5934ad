fn main() {
    std::process::exit(levyrank::cli::run_cli(std::env::args_os()));
}
