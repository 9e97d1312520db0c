fn main() {
    std::process::exit(pfd::cli::run(std::env::args_os()));
}
