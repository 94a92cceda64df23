fn main() {
    std::process::exit(vlasov_darwin::cli::main_with_args(std::env::args_os()));
}
