fn main() {
    std::process::exit(seqjde::cli::main());
}
