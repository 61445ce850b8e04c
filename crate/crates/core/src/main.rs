fn main() {
    std::process::exit(ratemill::cli::run(std::env::args_os()));
}
