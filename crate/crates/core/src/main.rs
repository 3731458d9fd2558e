fn main() {
    std::process::exit(multiverse_core::report::cli::run());
}
