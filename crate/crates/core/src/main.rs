fn main() {
    std::process::exit(mapmind::harness::cli::run());
}
