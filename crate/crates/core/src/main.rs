fn main() {
    std::process::exit(ndm::cli::run(std::env::args_os()));
}
