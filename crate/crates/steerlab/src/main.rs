use std::process::ExitCode;

fn main() -> ExitCode {
    steerlab::cli::main()
}
