fn main() {
    std::process::exit(mcsprob::cli::run(std::env::args_os()));
}
