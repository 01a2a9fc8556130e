fn main() {
    std::process::exit(sas::cli::run(std::env::args_os()));
}
