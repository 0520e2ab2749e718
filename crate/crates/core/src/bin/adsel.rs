fn main() {
    std::process::exit(adsel_core::cli::run(std::env::args_os()));
}
