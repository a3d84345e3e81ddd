use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpbo_cli::{run, Command, Options};

#[derive(Parser)]
#[command(
    name = "dpbo",
    version,
    about = "Infer PV array orientation and publish it privately"
)]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate irradiance and generation series from a scenario
    Synth(Options),
    /// Run Bayesian optimization over the orientation grid
    Infer(Options),
    /// Score every grid point
    Oracle(Options),
    /// Draw private releases from an `infer` run
    Publish(Options),
    /// Release error over a grid of privacy parameters
    Sweep(Options),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, opts) = match cli.command {
        Verb::Synth(o) => (Command::Synth, o),
        Verb::Infer(o) => (Command::Infer, o),
        Verb::Oracle(o) => (Command::Oracle, o),
        Verb::Publish(o) => (Command::Publish, o),
        Verb::Sweep(o) => (Command::Sweep, o),
    };
    match run(command, opts) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
