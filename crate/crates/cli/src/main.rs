fn main() {
    std::process::exit(mldp_cli::run());
}
