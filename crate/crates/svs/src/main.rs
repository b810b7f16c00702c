fn main() {
    std::process::exit(svs::cli::main_with(std::env::args_os()));
}
