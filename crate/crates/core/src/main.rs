fn main() {
    std::process::exit(specmark::cli::run(std::env::args_os()));
}
