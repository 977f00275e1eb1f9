fn main() {
    std::process::exit(glimpse_cli::run(std::env::args_os()));
}
