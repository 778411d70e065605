fn main() { std::process::exit(crossroute::cli::run(std::env::args().collect())); }
