fn main() {
    std::process::exit(scrubber_ftc::cli::cli_main(std::env::args()));
}
