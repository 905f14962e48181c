fn main() { std::process::exit(phaseflow::cli::run()); }
