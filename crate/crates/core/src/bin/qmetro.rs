use std::process::ExitCode;

fn main() -> ExitCode {
    qmetro::cli::main_entry()
}
