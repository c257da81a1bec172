fn main() {
    std::process::exit(otward_cli::run(std::env::args_os()));
}
