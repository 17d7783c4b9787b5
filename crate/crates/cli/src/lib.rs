//! Command-line front end: run studies, score offline metric tables, and
//! report on finished studies.

use std::io::Write;

use clap::{Parser, Subcommand};
use integral::scoring::DEFAULT_DOMINANCE;
use integral::Strategy;

pub mod error;
pub mod report;
pub mod run;
pub mod score;

pub use error::{CliError, Result};

/// Environment variable holding the log filter (`error`, `warn`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "INTEGRAL_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "integral",
    version,
    about = "Multi-criteria hyperparameter optimization with an integral indicator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) a study from a TOML config.
    Run(run::RunArgs),
    /// Score a table of metric records without running an optimizer.
    Score(score::ScoreArgs),
    /// Summarize a study directory.
    Report(report::ReportArgs),
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(args) => run::cmd_run(&args, out),
        Command::Score(args) => score::cmd_score(&args, out),
        Command::Report(args) => report::cmd_report(&args, out),
    }
}

/// Parses `balanced`, `dominant:<group>[:<delta>]` or `single:<metric>`.
pub fn parse_strategy(s: &str) -> Result<Strategy, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["balanced"] => Ok(Strategy::Balanced),
        ["dominant", group] => Ok(Strategy::Dominant { dominant_group: group.to_string(), dominance: DEFAULT_DOMINANCE }),
        ["dominant", group, delta] => {
            let dominance = delta.parse::<f64>().map_err(|e| format!("bad dominance `{delta}`: {e}"))?;
            Ok(Strategy::Dominant { dominant_group: group.to_string(), dominance })
        }
        ["single", metric] => Ok(Strategy::Single { target_metric: metric.to_string() }),
        _ => Err(format!("unknown strategy `{s}` (expected balanced, dominant:<group>[:<delta>] or single:<metric>)")),
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
