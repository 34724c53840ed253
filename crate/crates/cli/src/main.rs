fn main() {
    std::process::exit(bem_cli::app::main_with(std::env::args_os()));
}
