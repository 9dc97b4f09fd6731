fn main() {
    std::process::exit(simulst::cli::run(std::env::args_os()));
}
