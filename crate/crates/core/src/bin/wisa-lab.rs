fn main() -> std::process::ExitCode {
    wisa_lab::cli::main_with_args(std::env::args_os())
}
