use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(gridweave::cli::main(std::env::args_os()) as u8)
}
