fn main() {
    std::process::exit(hoam::cli::run(std::env::args_os()));
}
