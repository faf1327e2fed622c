fn main() {
    std::process::exit(gradiometer::cli::run(std::env::args_os()));
}
