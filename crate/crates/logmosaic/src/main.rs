use std::process::ExitCode;

fn main() -> ExitCode {
    logmosaic::cli::main()
}
