fn main() {
    std::process::exit(throwplan::cli::run(std::env::args_os()));
}
