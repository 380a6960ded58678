fn main() {
    std::process::exit(filternet::cli::run());
}
