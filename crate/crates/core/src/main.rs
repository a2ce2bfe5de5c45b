fn main() {
    std::process::exit(localplda::cli::run(std::env::args_os()));
}
