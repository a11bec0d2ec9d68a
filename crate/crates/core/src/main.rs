fn main() {
    std::process::exit(distort_stop::cli::run(std::env::args_os()));
}
