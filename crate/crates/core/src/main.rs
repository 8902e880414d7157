fn main() {
    std::process::exit(olc_core::harness::run_cli(std::env::args_os()));
}
