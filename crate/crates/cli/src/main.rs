fn main() {
    std::process::exit(ppt_cli::commands::main_with(std::env::args_os()));
}
