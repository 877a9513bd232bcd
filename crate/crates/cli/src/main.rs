fn main() {
    std::process::exit(drpi_cli::parse_and_dispatch(std::env::args_os()));
}
