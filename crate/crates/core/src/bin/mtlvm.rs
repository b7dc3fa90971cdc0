fn main() {
    std::process::exit(mtlvm::cli::main());
}
