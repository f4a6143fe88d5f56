fn main() {
    std::process::exit(trustboost::cli::run(std::env::args_os()));
}
