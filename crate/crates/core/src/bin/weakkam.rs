fn main() {
    std::process::exit(weakkam::cli::run_from(std::env::args_os()));
}
