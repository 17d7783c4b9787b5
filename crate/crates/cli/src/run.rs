use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use integral::study::Progress;
use integral::{Strategy, Study, StudyConfig};

use crate::error::{CliError, Result};
use crate::parse_strategy;

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Study config (TOML; `.json` files are read as JSON).
    #[arg(long, required_unless_present = "resume", conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Override the trial budget (also allowed with --resume).
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, conflicts_with = "resume")]
    pub seed: Option<u64>,
    #[arg(long, conflicts_with = "resume")]
    pub parallelism: Option<usize>,
    /// balanced | dominant:<group>[:<delta>] | single:<metric>
    #[arg(long, value_parser = parse_strategy, conflicts_with = "resume")]
    pub strategy: Option<Strategy>,
    /// Study directory for config.json, trials.jsonl and study.log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the study stored in --out.
    #[arg(long, requires = "out")]
    pub resume: bool,
}

/// Reads a study config; TOML unless the extension is `.json`.
pub fn load_config(path: &Path) -> Result<StudyConfig> {
    let err = |message: String| CliError::ConfigFile {
        path: path.to_owned(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

fn progress_line(p: &Progress<'_>) -> String {
    let t = p.trial;
    let status = if t.is_complete() {
        format!("objective {:.6}", t.objective)
    } else {
        format!("failed ({})", t.message.as_deref().unwrap_or("no message"))
    };
    let best = match p.best {
        Some(b) => format!("best {:.6} (trial {})", b.objective, b.id),
        None => "best -".to_string(),
    };
    format!("trial {:>4}  {status}  {best}", t.id)
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let mut study = if args.resume {
        let dir = args.out.as_deref().expect("clap enforces --out");
        let (study, warnings) = Study::resume(dir, args.budget)?;
        for w in warnings {
            log::warn!("{w}");
        }
        writeln!(
            out,
            "resuming {} at trial {}",
            dir.display(),
            study.trials().len()
        )?;
        study
    } else {
        let path = args.config.as_deref().expect("clap enforces --config");
        let mut config = load_config(path)?;
        if let Some(b) = args.budget {
            config.budget = b;
        }
        if let Some(s) = args.seed {
            config.seed = s;
        }
        if let Some(p) = args.parallelism {
            config.parallelism = p;
        }
        if let Some(s) = &args.strategy {
            config.strategy = s.clone();
        }
        match &args.out {
            Some(dir) => Study::create(config, dir)?,
            None => Study::new(config)?,
        }
    };

    let config = study.state().config.clone();
    let evaluator = config.evaluator.build(&config.metrics)?;
    let mut write_err = None;
    let outcome = study.run(&evaluator, |p| {
        if write_err.is_none() {
            if let Err(e) = writeln!(out, "{}", progress_line(&p)) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    outcome?;

    let state = study.state();
    let completed = state.trials.iter().filter(|t| t.is_complete()).count();
    writeln!(
        out,
        "finished: {} trials ({completed} completed, {} failed), strategy {}",
        state.trials.len(),
        state.trials.len() - completed,
        config.strategy.label()
    )?;
    match state.best() {
        Some(b) => writeln!(
            out,
            "best trial {}: objective {:.6}  {}",
            b.id, b.objective, b.params
        )?,
        None => writeln!(out, "no completed trials")?,
    }
    if let Some(dir) = &args.out {
        writeln!(out, "study saved to {}", dir.display())?;
    }
    Ok(())
}
