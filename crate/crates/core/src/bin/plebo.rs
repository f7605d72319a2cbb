fn main() {
    std::process::exit(plebo::cli::run(std::env::args_os()));
}
