fn main() {
    std::process::exit(rrpcp::harness::cli_main(std::env::args_os()));
}
