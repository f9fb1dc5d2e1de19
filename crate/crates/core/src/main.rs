fn main() {
    std::process::exit(ecp_sim::cli::run_cli(std::env::args_os()));
}
