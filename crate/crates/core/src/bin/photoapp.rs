fn main() {
    std::process::exit(photoapp::cli::run(std::env::args_os()));
}
