fn main() {
    std::process::exit(fwkit::cli::run(std::env::args_os()));
}
