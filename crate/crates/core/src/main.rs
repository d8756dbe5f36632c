fn main() {
    std::process::exit(cep_core::cli::main_with_args(std::env::args_os()));
}
