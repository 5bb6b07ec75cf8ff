fn main() {
    std::process::exit(soslasso::cli::run(std::env::args_os()));
}
