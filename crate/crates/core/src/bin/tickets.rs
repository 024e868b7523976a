fn main() {
    std::process::exit(adaptive_tickets::cli::main_with(std::env::args_os()));
}
