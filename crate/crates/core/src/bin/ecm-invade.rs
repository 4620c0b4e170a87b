fn main() {
    std::process::exit(ecm_invade::cli::main_with_args(std::env::args_os()));
}
