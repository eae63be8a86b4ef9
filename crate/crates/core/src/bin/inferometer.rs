fn main() {
    std::process::exit(inferometer::cli::main());
}
