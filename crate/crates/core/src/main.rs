fn main() {
    std::process::exit(ensembleq::cli::run(std::env::args_os()));
}
