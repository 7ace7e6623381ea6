fn main() {
    std::process::exit(diffusion_limit::cli::main_with_args(std::env::args_os()));
}
