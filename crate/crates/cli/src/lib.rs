//! Library side of the `dpbo` command: option handling and the five
//! commands, each a pure function of its inputs, options and seed.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

pub use config::Options;
pub use error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Infer,
    Oracle,
    Publish,
    Sweep,
}

/// Resolves `--config` against the flags and runs the command. Returns the
/// files written.
pub fn run(command: Command, flags: Options) -> Result<Vec<PathBuf>> {
    let opts = Options::load(flags)?;
    match command {
        Command::Synth => commands::synth(&opts),
        Command::Infer => commands::infer(&opts),
        Command::Oracle => commands::oracle(&opts),
        Command::Publish => commands::publish(&opts),
        Command::Sweep => commands::sweep(&opts),
    }
}
