fn main() {
    std::process::exit(archetype_cli::cli::run_cli(std::env::args_os()));
}
