fn main() {
    std::process::exit(trialrl::harness::cli::main());
}
