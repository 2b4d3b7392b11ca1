fn main() {
    std::process::exit(rmtclt::cli::run(std::env::args_os()));
}
