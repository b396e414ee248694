use std::process::ExitCode;

fn main() -> ExitCode {
    let outcome = recurlab_cli::run_from_args(std::env::args_os());
    print!("{}", outcome.stdout);
    if let Some(rec) = &outcome.error {
        eprint!("{}", rec.to_text());
    }
    ExitCode::from(outcome.exit_code)
}
