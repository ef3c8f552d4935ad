use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use pmdp_cli::{run, Cli, Report, EXIT_INVALID};

fn emit(cli: &Cli, report: &Report) -> std::io::Result<()> {
    let text = report.render(cli.output.output);
    match &cli.output.out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (report, code) = match run(&cli.command) {
        Ok(report) => (Some(report), 0),
        Err(e) => {
            eprintln!("error: {e}");
            (e.report.map(|r| *r), e.code)
        }
    };
    if let Some(report) = report {
        if let Err(e) = emit(&cli, &report) {
            eprintln!("error: cannot write output: {e}");
            return ExitCode::from(EXIT_INVALID as u8);
        }
    }
    ExitCode::from(code as u8)
}
