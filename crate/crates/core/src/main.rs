fn main() {
    std::process::exit(avtr::cli::run(std::env::args_os()));
}
