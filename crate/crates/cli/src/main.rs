use std::process::ExitCode;

fn main() -> ExitCode {
    eqcov_cli::run(std::env::args_os())
}
