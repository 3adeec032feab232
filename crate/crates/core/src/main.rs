fn main() {
    std::process::exit(stylemetric::cli::run(std::env::args_os()));
}
