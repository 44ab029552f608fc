fn main() {
    std::process::exit(niqqud::cli::run(std::env::args_os()));
}
