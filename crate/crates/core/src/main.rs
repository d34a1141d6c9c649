fn main() {
    std::process::exit(asmlc::cli::run(std::env::args_os()));
}
