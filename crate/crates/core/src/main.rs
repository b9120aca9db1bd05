fn main() {
    std::process::exit(elemid::cli::run(std::env::args_os()));
}
