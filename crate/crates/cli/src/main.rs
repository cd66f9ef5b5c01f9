fn main() {
    std::process::exit(wss_cli::run(std::env::args_os()));
}
