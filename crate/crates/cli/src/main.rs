fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(tidal_cli::run_command(&argv));
}
