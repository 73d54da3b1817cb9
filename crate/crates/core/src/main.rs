fn main() {
    std::process::exit(wat_core::cli::run());
}
