fn main() {
    std::process::exit(msurv::cli::run(std::env::args_os()));
}
