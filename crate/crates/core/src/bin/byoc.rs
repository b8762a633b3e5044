fn main() {
    std::process::exit(byoc::cli::main());
}
