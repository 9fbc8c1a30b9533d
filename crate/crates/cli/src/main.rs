//! `scenediff` command-line entry point.
//!
//! Exit status: 0 on success, 1 when the command fails, 2 on usage errors.

mod args;
mod battery_file;
mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let json = cli.command.json();
    let result = match &cli.command {
        Command::InitReference(a) => commands::init_reference(a),
        Command::Score(a) => commands::score(a),
        Command::Qoq(a) => commands::qoq_command(a),
        Command::AnalyzeSubsets(a) => commands::analyze_subsets(a),
        Command::SelectBattery(a) => commands::select_battery(a),
    };
    let (text, code) = match result {
        Ok(out) if json => (
            serde_json::to_string_pretty(&out.json).expect("serializable output"),
            ExitCode::SUCCESS,
        ),
        Ok(out) => (out.human, ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e:#}");
            if !json {
                return ExitCode::FAILURE;
            }
            (
                serde_json::json!({ "error": format!("{e:#}") }).to_string(),
                ExitCode::FAILURE,
            )
        }
    };
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{text}").and_then(|()| stdout.flush());
    code
}
