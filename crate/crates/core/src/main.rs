fn main() {
    std::process::exit(optiforest::cli::main());
}
