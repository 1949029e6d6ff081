fn main() {
    std::process::exit(harvestnet::cli::main());
}
