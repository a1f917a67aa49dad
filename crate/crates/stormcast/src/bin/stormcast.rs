fn main() {
    std::process::exit(stormcast::cli::run(std::env::args()));
}
