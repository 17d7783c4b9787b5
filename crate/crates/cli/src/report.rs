//! Study summaries: best trial per strategy, sub-index Pareto set, clamp counts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use integral::scoring::{integral_value, strategy_subindex_weights, DEFAULT_DOMINANCE};
use integral::study::store::CONFIG_FILE;
use integral::{load_study, ScoreBreakdown, Strategy, StudyState, Trial, TrialStatus};

use crate::error::{CliError, Result};
use crate::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Study directory written by `run --out`.
    pub study_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Best completed trial under one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBest {
    pub strategy: Strategy,
    pub trial_id: u64,
    pub objective: f64,
}

/// One trial as it appears in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub trial_id: u64,
    pub status: TrialStatus,
    pub objective: f64,
    pub breakdown: Option<ScoreBreakdown>,
    /// Not dominated by another completed trial on the sub-index vector.
    pub pareto: bool,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub strategy: Strategy,
    pub metrics: Vec<String>,
    pub groups: Vec<String>,
    pub best: Vec<StrategyBest>,
    pub rows: Vec<ReportRow>,
    /// Trials whose raw value was clamped into the declared range, per metric.
    pub clamp_counts: BTreeMap<String, usize>,
}

/// Objective of a scored trial under another strategy, keeping its
/// normalized values and metric weights.
pub fn objective_under(
    breakdown: &ScoreBreakdown,
    strategy: &Strategy,
    groups: &[String],
) -> Result<f64> {
    match strategy {
        Strategy::Single { target_metric } => Ok(breakdown
            .normalized
            .get(target_metric)
            .copied()
            .unwrap_or(0.0)),
        _ => Ok(integral_value(
            &breakdown.subindex_values,
            &strategy_subindex_weights(strategy, groups)?,
        )),
    }
}

/// Balanced, every dominant group (when there are at least two groups) and every single metric.
pub fn comparison_strategies(groups: &[String], metrics: &[String]) -> Vec<Strategy> {
    let mut out = vec![Strategy::Balanced];
    if groups.len() >= 2 {
        out.extend(groups.iter().map(|g| Strategy::Dominant {
            dominant_group: g.clone(),
            dominance: DEFAULT_DOMINANCE,
        }));
    }
    out.extend(metrics.iter().map(|m| Strategy::Single {
        target_metric: m.clone(),
    }));
    out
}

fn dominates(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> bool {
    a.iter().all(|(g, v)| *v >= b[g]) && a.iter().any(|(g, v)| *v > b[g])
}

pub fn summarize(state: &StudyState) -> Result<ReportSummary> {
    let completed: Vec<&Trial> = state
        .trials
        .iter()
        .filter(|t| t.is_complete() && t.breakdown.is_some())
        .collect();
    if completed.is_empty() {
        return Err(integral::Error::EmptyStudy.into());
    }
    let metrics: Vec<String> = state
        .config
        .metrics
        .iter()
        .map(|m| m.name.clone())
        .collect();
    let mut groups: Vec<String> = Vec::new();
    for m in &state.config.metrics {
        if !groups.contains(&m.group) {
            groups.push(m.group.clone());
        }
    }

    let mut best = Vec::new();
    for strategy in comparison_strategies(&groups, &metrics) {
        let mut top: Option<(u64, f64)> = None;
        for t in &completed {
            let v = objective_under(t.breakdown.as_ref().expect("filtered"), &strategy, &groups)?;
            if top.is_none_or(|(_, b)| v > b) {
                top = Some((t.id, v));
            }
        }
        let (trial_id, objective) = top.expect("non-empty");
        best.push(StrategyBest {
            strategy,
            trial_id,
            objective,
        });
    }

    let subs: Vec<&BTreeMap<String, f64>> = completed
        .iter()
        .map(|t| &t.breakdown.as_ref().expect("filtered").subindex_values)
        .collect();
    let rows = state
        .trials
        .iter()
        .map(|t| {
            let pareto = t.breakdown.as_ref().is_some_and(|b| {
                t.is_complete()
                    && !subs
                        .iter()
                        .any(|other| dominates(other, &b.subindex_values))
            });
            ReportRow {
                trial_id: t.id,
                status: t.status,
                objective: t.objective,
                breakdown: t.breakdown.clone(),
                pareto,
                params: t.params.to_string(),
            }
        })
        .collect();

    let mut clamp_counts: BTreeMap<String, usize> =
        metrics.iter().map(|m| (m.clone(), 0)).collect();
    for t in &completed {
        for m in &t.breakdown.as_ref().expect("filtered").clamped {
            *clamp_counts.entry(m.clone()).or_default() += 1;
        }
    }
    Ok(ReportSummary {
        strategy: state.config.strategy.clone(),
        metrics,
        groups,
        best,
        rows,
        clamp_counts,
    })
}

fn status_name(s: TrialStatus) -> &'static str {
    match s {
        TrialStatus::Complete => "complete",
        TrialStatus::Failed => "failed",
    }
}

impl ReportSummary {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec![
            "trial_id".to_string(),
            "status".into(),
            "objective".into(),
            "integral".into(),
            "pareto".into(),
        ];
        h.extend(self.groups.iter().map(|g| format!("sub:{g}")));
        h.extend(self.metrics.iter().map(|m| format!("norm:{m}")));
        h.extend(self.metrics.iter().map(|m| format!("weight:{m}")));
        h.push("clamped".into());
        h.push("params".into());
        h
    }

    /// One row per trial; failed trials leave the breakdown columns empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.trial_id.to_string(),
                status_name(r.status).to_string(),
                fmt_f64(r.objective),
                r.breakdown
                    .as_ref()
                    .map(|b| fmt_f64(b.integral))
                    .unwrap_or_default(),
                r.pareto.to_string(),
            ];
            let cell = |f: &dyn Fn(&ScoreBreakdown) -> f64| {
                r.breakdown
                    .as_ref()
                    .map(|b| fmt_f64(f(b)))
                    .unwrap_or_default()
            };
            rec.extend(self.groups.iter().map(|g| cell(&|b| b.subindex_values[g])));
            rec.extend(self.metrics.iter().map(|m| cell(&|b| b.normalized[m])));
            rec.extend(
                self.metrics
                    .iter()
                    .map(|m| cell(&|b| b.metric_weights.get(m))),
            );
            rec.push(
                r.breakdown
                    .as_ref()
                    .map(|b| b.clamped.join(";"))
                    .unwrap_or_default(),
            );
            rec.push(r.params.clone());
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn render_text(&self, out: &mut dyn Write) -> Result<()> {
        let completed = self
            .rows
            .iter()
            .filter(|r| r.status == TrialStatus::Complete)
            .count();
        writeln!(
            out,
            "{} trials ({completed} completed, {} failed), study strategy {}",
            self.rows.len(),
            self.rows.len() - completed,
            self.strategy.label()
        )?;
        if let Some(b) = self.rows.iter().find_map(|r| r.breakdown.as_ref()) {
            writeln!(out, "\nmetric weights:")?;
            for m in &self.metrics {
                writeln!(out, "  {m:<16} {:.6}", b.metric_weights.get(m))?;
            }
        }
        writeln!(out, "\nbest trial per strategy:")?;
        let width = self
            .best
            .iter()
            .map(|b| b.strategy.label().len())
            .max()
            .unwrap_or(8);
        for b in &self.best {
            let params = &self.rows[b.trial_id as usize].params;
            writeln!(
                out,
                "  {:<width$}  trial {:>4}  {:.6}  {params}",
                b.strategy.label(),
                b.trial_id,
                b.objective
            )?;
        }
        writeln!(out, "\nsub-index Pareto set ({}):", self.groups.join(", "))?;
        for r in self.rows.iter().filter(|r| r.pareto) {
            let b = r.breakdown.as_ref().expect("pareto rows are scored");
            let subs: Vec<String> = self
                .groups
                .iter()
                .map(|g| format!("{:.4}", b.subindex_values[g]))
                .collect();
            writeln!(
                out,
                "  trial {:>4}  [{}]  objective {:.6}",
                r.trial_id,
                subs.join(", "),
                r.objective
            )?;
        }
        writeln!(out, "\nclamped values:")?;
        for (m, n) in &self.clamp_counts {
            writeln!(out, "  {m:<16} {n}")?;
        }
        Ok(())
    }
}

/// Loads a study directory for reporting.
pub fn load_for_report(dir: &Path) -> Result<StudyState> {
    let meta = std::fs::metadata(dir).map_err(|e| CliError::io(dir, e))?;
    if !meta.is_dir() {
        return Err(CliError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }
    std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    if !dir.join(CONFIG_FILE).exists() {
        return Err(integral::Error::EmptyStudy.into());
    }
    let loaded = load_study(dir)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.state)
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let state = load_for_report(&args.study_dir)?;
    let summary = summarize(&state)?;
    match args.format {
        Format::Text => summary.render_text(out),
        Format::Csv => summary.write_csv(out),
    }
}
