fn main() {
    std::process::exit(dsvis_cli::run(std::env::args_os()));
}
