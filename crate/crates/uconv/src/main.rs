use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(uconv::cli::main_with(std::env::args_os()))
}
