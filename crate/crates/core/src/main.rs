fn main() {
    std::process::exit(fcft::cli::main(std::env::args_os()));
}
