fn main() {
    std::process::exit(nlharm_cli::run(std::env::args_os()));
}
