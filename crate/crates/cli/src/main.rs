fn main() {
    std::process::exit(usscan_cli::cli::run(std::env::args_os()));
}
