fn main() {
    std::process::exit(tailcal::cli::run());
}
