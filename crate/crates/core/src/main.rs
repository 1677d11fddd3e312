fn main() {
    std::process::exit(elevgraph::cli::run(std::env::args_os()));
}
