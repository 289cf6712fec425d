fn main() {
    std::process::exit(dualgen::harness::cli_dispatch(std::env::args()));
}
