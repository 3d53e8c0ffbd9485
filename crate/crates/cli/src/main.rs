fn main() {
    std::process::exit(gsflow_cli::run(std::env::args_os()));
}
