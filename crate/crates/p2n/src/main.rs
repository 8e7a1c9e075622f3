use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(p2n::cli::run(std::env::args_os()))
}
