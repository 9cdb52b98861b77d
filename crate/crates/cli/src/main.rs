use std::process::ExitCode;

use alevs_cli::{compare, format_run, format_tables, run, serve, verify, Cli, Command};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args).map(|(res, out)| {
            print!("{}", format_run(&res));
            println!("results written to {}", out.display());
            true
        }),
        Command::Compare(args) => compare(args).map(|tables| {
            print!("{}", format_tables(&tables));
            true
        }),
        Command::Verify(args) => verify(args).map(|outcome| {
            print!("{}", outcome.describe());
            outcome.passed()
        }),
        Command::Serve(args) => serve(args).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
