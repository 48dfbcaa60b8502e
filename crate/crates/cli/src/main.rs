fn main() {
    std::process::exit(skewfit_cli::run(std::env::args_os()));
}
