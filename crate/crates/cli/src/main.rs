use std::process::ExitCode;

use clap::Parser;
use mclf_cli::args::{Cli, Command};
use mclf_cli::commands::{cmd_eval, cmd_gen, cmd_run, resolve_config};
use mclf_cli::selftest::{run_selftest, SelftestOptions};
use mclf_cli::CliError;

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Gen(args) => {
            println!("{}", cmd_gen(&cfg, &args)?.display());
        }
        Command::Run(args) => {
            for path in cmd_run(&cfg, &args)? {
                println!("{}", path.display());
            }
        }
        Command::Eval(args) => {
            let summary = cmd_eval(&cfg, &args)?;
            println!("{}", serde_json::to_string_pretty(&summary.result)?);
        }
        Command::Selftest(args) => {
            let opts = SelftestOptions {
                corrupt_gradient: args.corrupt_gradient,
            };
            let report = run_selftest(&cfg, &opts);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                let names: Vec<&str> = report.failed().map(|c| c.name).collect();
                return Err(CliError::Failed(format!("failed checks: {}", names.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
