fn main() {
    std::process::exit(lds_cli::run(std::env::args_os()));
}
