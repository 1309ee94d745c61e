use std::process::ExitCode;

fn main() -> ExitCode {
    m3e2::cli::main_entry()
}
