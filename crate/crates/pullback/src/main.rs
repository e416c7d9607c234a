fn main() {
    std::process::exit(pullback::cli::run(std::env::args_os()));
}
