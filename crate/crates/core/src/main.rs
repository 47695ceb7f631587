use std::process::ExitCode;

fn main() -> ExitCode {
    sleepnet::cli::main_with_args(std::env::args_os())
}
