fn main() {
    std::process::exit(ccafuse::cli::run(std::env::args_os()));
}
