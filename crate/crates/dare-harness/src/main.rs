fn main() {
    std::process::exit(dare_harness::cli::run(std::env::args_os()));
}
