fn main() {
    std::process::exit(lesiondet::cli::main(std::env::args_os()));
}
