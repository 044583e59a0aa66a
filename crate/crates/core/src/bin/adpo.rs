fn main() -> std::process::ExitCode {
    adpo::cli::main_with(std::env::args_os())
}
