fn main() {
    std::process::exit(spikedcov::cli::dispatch(std::env::args()));
}
