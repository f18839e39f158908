fn main() {
    std::process::exit(eprsim_core::cli::main());
}
