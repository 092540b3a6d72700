use std::process::ExitCode;

fn main() -> ExitCode {
    invres::cli::run(std::env::args_os())
}
