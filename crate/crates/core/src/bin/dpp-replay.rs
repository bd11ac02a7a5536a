fn main() {
    std::process::exit(dpp_replay::cli::run(std::env::args_os()));
}
