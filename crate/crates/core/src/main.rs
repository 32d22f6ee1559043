fn main() {
    std::process::exit(tiled_sr::cli::main_with_args(std::env::args_os()));
}
