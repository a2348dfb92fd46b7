fn main() {
    std::process::exit(threathunt_cli::main_with_args());
}
