fn main() {
    std::process::exit(skilllab::harness::cli::cli_dispatch(std::env::args_os()));
}
