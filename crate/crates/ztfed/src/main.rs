fn main() {
    std::process::exit(ztfed::cli::main_with_args(std::env::args_os()));
}
