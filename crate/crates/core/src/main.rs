fn main() {
    std::process::exit(dmp_core::cli::run(std::env::args_os()));
}
