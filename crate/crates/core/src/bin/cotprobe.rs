fn main() {
    std::process::exit(cotprobe::cli::run(std::env::args_os()));
}
