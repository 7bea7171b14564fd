fn main() {
    std::process::exit(mtpshift::cli::run_from_args(std::env::args_os()));
}
