use std::process::ExitCode;

use clap::Parser;

use semqp::{Cli, CliError, ExitKind};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitKind::Parse.code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let fail = |e: CliError| {
        eprintln!("error: {e}");
        ExitCode::from(e.kind.code() as u8)
    };
    let outcome = match semqp::commands::run(&cli.command) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    if let Some(path) = &cli.command.common().out {
        if let Err(e) = std::fs::write(path, outcome.report.to_json()) {
            return fail(CliError::parse(format!("{}: {e}", path.display())));
        }
    }
    print!("{}", outcome.report.to_text());
    if let Some(msg) = &outcome.message {
        eprintln!("error: {msg}");
    }
    ExitCode::from(outcome.status.code() as u8)
}
