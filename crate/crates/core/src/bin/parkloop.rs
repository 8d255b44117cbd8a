fn main() {
    std::process::exit(parkloop_core::scenario_io::cli(std::env::args_os()));
}
