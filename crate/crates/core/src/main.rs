fn main() {
    std::process::exit(adxai::cli::main_with_args(std::env::args_os()));
}
