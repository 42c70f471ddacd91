fn main() {
    std::process::exit(mogel::cli::run(std::env::args_os()));
}
