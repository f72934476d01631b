use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(egospeed_cli::run(std::env::args_os()))
}
