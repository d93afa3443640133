fn main() {
    std::process::exit(gbsm::cli::run(std::env::args().collect()));
}
