fn main() {
    std::process::exit(dgcl::cli::main());
}
