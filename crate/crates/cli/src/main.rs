fn main() {
    std::process::exit(byzgrad_cli::run(std::env::args_os()));
}
