fn main() {
    std::process::exit(bcosfire::cli::cli_main());
}
