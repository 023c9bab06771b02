fn main() {
    std::process::exit(quantile_closure::cli::run(std::env::args_os()));
}
