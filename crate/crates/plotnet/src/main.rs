fn main() {
    std::process::exit(plotnet::cli::main());
}
