fn main() {
    std::process::exit(symdec::cli::main_with(std::env::args_os()));
}
