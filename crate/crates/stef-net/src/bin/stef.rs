fn main() {
    std::process::exit(stef_net::cli::main());
}
