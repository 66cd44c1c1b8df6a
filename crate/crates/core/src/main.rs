fn main() {
    std::process::exit(hdmed::cli::run(std::env::args_os()));
}
