use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ludvision_cli::run(std::env::args_os()))
}
