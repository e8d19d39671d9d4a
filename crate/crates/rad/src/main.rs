use std::process::ExitCode;

fn main() -> ExitCode {
    rad::cli::run(std::env::args_os())
}
