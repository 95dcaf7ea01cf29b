fn main() {
    std::process::exit(recnet::cli::run(std::env::args_os()));
}
