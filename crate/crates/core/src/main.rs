fn main() {
    std::process::exit(delaycea::cli::run(std::env::args_os()));
}
