fn main() {
    std::process::exit(carbonflex::cli::main());
}
