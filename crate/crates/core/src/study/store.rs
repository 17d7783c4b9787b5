//! On-disk layout of a study directory.
//!
//! * `config.json`: the full [`StudyConfig`].
//! * `trials.jsonl`: one [`TrialRecord`] per line, appended and flushed as
//!   trials finish.
//! * `study.log`: evaluator stderr and engine events.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreBreakdown;
use crate::space::ParamVector;
use crate::study::config::{StudyConfig, SCHEMA_VERSION};
use crate::trial::{Trial, TrialStatus};

pub const CONFIG_FILE: &str = "config.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const LOG_FILE: &str = "study.log";

/// Position of a trial within the ask sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchInfo {
    /// Index of the ask that proposed the trial.
    pub batch: u64,
    /// Batch size requested from the optimizer at that ask.
    pub ask_size: usize,
    /// Random stream position right after the ask.
    pub rng_cursor: u128,
}

/// One line of `trials.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub trial_id: u64,
    pub params: ParamVector,
    pub metrics: BTreeMap<String, f64>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<ScoreBreakdown>,
    pub objective: f64,
    pub batch: u64,
    pub ask_size: usize,
    pub rng_cursor: u128,
}

impl TrialRecord {
    pub fn new(trial: &Trial, info: BatchInfo) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            trial_id: trial.id,
            params: trial.params.clone(),
            metrics: trial.metrics.clone(),
            status: trial.status,
            message: trial.message.clone(),
            duration: trial.duration,
            breakdown: trial.breakdown.clone(),
            objective: trial.objective,
            batch: info.batch,
            ask_size: info.ask_size,
            rng_cursor: info.rng_cursor,
        }
    }

    pub fn info(&self) -> BatchInfo {
        BatchInfo {
            batch: self.batch,
            ask_size: self.ask_size,
            rng_cursor: self.rng_cursor,
        }
    }

    pub fn to_trial(&self) -> Trial {
        Trial {
            id: self.trial_id,
            params: self.params.clone(),
            metrics: self.metrics.clone(),
            status: self.status,
            message: self.message.clone(),
            duration: self.duration,
            breakdown: self.breakdown.clone(),
            objective: self.objective,
        }
    }
}

/// Raw contents of a study directory.
#[derive(Debug, Clone)]
pub struct StoredStudy {
    pub config: StudyConfig,
    pub records: Vec<TrialRecord>,
    /// Problems that were repaired while reading, such as a torn last line.
    pub warnings: Vec<String>,
}

/// Writable handle on a study directory.
#[derive(Debug)]
pub struct StudyStore {
    dir: PathBuf,
    trials: File,
    log: File,
}

fn write_config(dir: &Path, config: &StudyConfig) -> Result<()> {
    let tmp = dir.join(format!("{CONFIG_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(config)? + "\n")?;
    fs::rename(tmp, dir.join(CONFIG_FILE))?;
    Ok(())
}

fn open_append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

impl StudyStore {
    /// Starts a new study in `dir`, which must not already hold trials.
    pub fn create(dir: &Path, config: &StudyConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let trials_path = dir.join(TRIALS_FILE);
        if fs::metadata(&trials_path)
            .map(|m| m.len() > 0)
            .unwrap_or(false)
        {
            return Err(Error::Config(format!(
                "{} already holds trials; resume it or pick another directory",
                dir.display()
            )));
        }
        write_config(dir, config)?;
        File::create(&trials_path)?;
        Ok(Self {
            dir: dir.to_owned(),
            trials: open_append(&trials_path)?,
            log: open_append(&dir.join(LOG_FILE))?,
        })
    }

    /// Reopens an existing study for appending, repairing a torn last line.
    pub fn open(dir: &Path) -> Result<(Self, StoredStudy)> {
        let stored = read_study(dir, true)?;
        let store = Self {
            dir: dir.to_owned(),
            trials: open_append(&dir.join(TRIALS_FILE))?,
            log: open_append(&dir.join(LOG_FILE))?,
        };
        Ok((store, stored))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn save_config(&self, config: &StudyConfig) -> Result<()> {
        write_config(&self.dir, config)
    }

    /// Appends one line and flushes it to the operating system.
    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.trials.write_all(line.as_bytes())?;
        self.trials.flush()?;
        Ok(())
    }

    /// Replaces the whole trial file atomically.
    pub fn rewrite(&mut self, records: &[TrialRecord]) -> Result<()> {
        let path = self.dir.join(TRIALS_FILE);
        let tmp = self.dir.join(format!("{TRIALS_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        self.trials = open_append(&path)?;
        Ok(())
    }

    pub fn log(&mut self, line: &str) -> Result<()> {
        for l in line.lines() {
            writeln!(self.log, "{l}")?;
        }
        self.log.flush()?;
        Ok(())
    }
}

/// Reads a study directory without modifying it.
pub fn read_study_dir(dir: &Path) -> Result<StoredStudy> {
    read_study(dir, false)
}

fn read_study(dir: &Path, repair: bool) -> Result<StoredStudy> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path)?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: config_path.clone(),
        message: e.to_string(),
    })?;
    check_version(&raw)?;
    let config: StudyConfig = serde_json::from_value(raw).map_err(|e| Error::Corrupt {
        path: config_path.clone(),
        message: e.to_string(),
    })?;

    let trials_path = dir.join(TRIALS_FILE);
    let text = match fs::read_to_string(&trials_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut offset = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let last = i + 1 == lines.len();
        let parsed = serde_json::from_str::<TrialRecord>(line.trim_end_matches(['\n', '\r']))
            .map_err(|e| e.to_string());
        match parsed {
            Ok(r) => {
                check_version_of(&r)?;
                if r.trial_id != records.len() as u64 {
                    return Err(Error::Corrupt {
                        path: trials_path,
                        message: format!(
                            "line {}: expected trial {}, found {}",
                            i + 1,
                            records.len(),
                            r.trial_id
                        ),
                    });
                }
                records.push(r);
                offset += line.len();
            }
            Err(message) if last => {
                // a version mismatch is never a torn write
                if let Some(v) = line_version(line) {
                    if v != SCHEMA_VERSION {
                        return Err(Error::UnsupportedVersion {
                            found: v,
                            expected: SCHEMA_VERSION,
                        });
                    }
                }
                warnings.push(format!(
                    "dropped unreadable last line {} of {} ({message})",
                    i + 1,
                    trials_path.display()
                ));
                if repair {
                    let f = OpenOptions::new().write(true).open(&trials_path)?;
                    f.set_len(offset as u64)?;
                    f.sync_all()?;
                }
            }
            Err(message) => {
                if let Some(v) = line_version(line) {
                    if v != SCHEMA_VERSION {
                        return Err(Error::UnsupportedVersion {
                            found: v,
                            expected: SCHEMA_VERSION,
                        });
                    }
                }
                return Err(Error::Corrupt {
                    path: trials_path,
                    message: format!("line {}: {message}", i + 1),
                });
            }
        }
    }
    if repair && offset == text.len() && !text.is_empty() && !text.ends_with('\n') {
        // complete record without its newline; terminate it before appending
        OpenOptions::new()
            .append(true)
            .open(&trials_path)?
            .write_all(b"\n")?;
    }
    Ok(StoredStudy {
        config,
        records,
        warnings,
    })
}

fn line_version(line: &str) -> Option<u32> {
    let v: serde_json::Value = serde_json::from_str(line.trim()).ok()?;
    v.get("schema_version")?.as_u64().map(|n| n as u32)
}

fn check_version(value: &serde_json::Value) -> Result<()> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v != SCHEMA_VERSION as u64 => Err(Error::UnsupportedVersion {
            found: v as u32,
            expected: SCHEMA_VERSION,
        }),
        _ => Ok(()),
    }
}

fn check_version_of(record: &TrialRecord) -> Result<()> {
    if record.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            found: record.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}
