//! Offline scoring of metric tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use integral::scoring::{
    blend_weights, build_matrix, metric_weights, objective_value, score_matrix,
};
use integral::{MetricSet, MetricSpec, RangeSource, ScoreBreakdown, Strategy, Trial, WeightVector};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::{fmt_f64, parse_strategy};

/// Columns that name a row instead of holding a metric, in lookup order.
pub const LABEL_COLUMNS: [&str; 6] = ["label", "name", "model", "id", "trial", "trial_id"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Declared metric ranges.
    Declared,
    /// Min/max over the rows of the table.
    Observed,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Metric table: CSV with a header row, or JSON Lines (`.jsonl`).
    #[arg(long)]
    pub metrics: PathBuf,
    /// Metric definitions (TOML with `[[metrics]]` entries, or JSON); a study config works too.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Observed)]
    pub mode: Mode,
    /// Also write the scored table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Overrides the strategy from the spec file.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
}

fn default_alpha() -> f64 {
    0.5
}

/// Metric definitions for offline scoring.
#[derive(Debug, Clone, Deserialize)]
pub struct ScoreSpec {
    pub metrics: Vec<MetricSpec>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_alpha")]
    pub expert_alpha: f64,
}

impl ScoreSpec {
    pub fn load(path: &Path) -> Result<Self> {
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
}

/// Raw records: one label and one value per metric for each row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub labels: Vec<String>,
    pub rows: Vec<BTreeMap<String, f64>>,
}

fn parse_number(raw: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        CliError::Schema(format!(
            "row {row}: column `{column}` holds `{raw}`, not a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::Schema(format!(
            "row {row}: column `{column}` is not finite"
        )));
    }
    Ok(v)
}

impl MetricTable {
    pub fn read(path: &Path, metrics: &MetricSet) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "jsonl") {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Self::from_jsonl(&text, metrics)
        } else {
            let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
            Self::from_csv(csv::Reader::from_reader(file), metrics)
        }
    }

    pub fn from_csv<R: std::io::Read>(
        mut reader: csv::Reader<R>,
        metrics: &MetricSet,
    ) -> Result<Self> {
        let headers = reader.headers()?.clone();
        let position = |name: &str| headers.iter().position(|h| h.trim() == name);
        let label_col = LABEL_COLUMNS.iter().find_map(|c| position(c));
        let cols = metrics
            .names()
            .map(|name| {
                position(name)
                    .map(|i| (name.to_owned(), i))
                    .ok_or_else(|| CliError::Schema(format!("missing metric column `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = MetricTable {
            labels: Vec::new(),
            rows: Vec::new(),
        };
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = BTreeMap::new();
            for (name, i) in &cols {
                row.insert(
                    name.clone(),
                    parse_number(record.get(*i).unwrap_or(""), name, r)?,
                );
            }
            let label = label_col
                .and_then(|i| record.get(i))
                .map(str::to_owned)
                .unwrap_or_else(|| r.to_string());
            table.labels.push(label);
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn from_jsonl(text: &str, metrics: &MetricSet) -> Result<Self> {
        let mut table = MetricTable {
            labels: Vec::new(),
            rows: Vec::new(),
        };
        for (r, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)
                .map_err(|e| CliError::Schema(format!("row {r}: not a JSON object: {e}")))?;
            let mut row = BTreeMap::new();
            for name in metrics.names() {
                let v = obj
                    .get(name)
                    .ok_or_else(|| CliError::Schema(format!("missing metric column `{name}`")))?;
                let x = match v {
                    serde_json::Value::Number(n) => n.as_f64().filter(|x| x.is_finite()),
                    serde_json::Value::String(s) => Some(parse_number(s, name, r)?),
                    _ => None,
                };
                let x = x.ok_or_else(|| {
                    CliError::Schema(format!("row {r}: column `{name}` holds {v}, not a number"))
                })?;
                row.insert(name.to_owned(), x);
            }
            let label = LABEL_COLUMNS
                .iter()
                .find_map(|c| obj.get(*c))
                .map(|v| {
                    v.as_str()
                        .map(str::to_owned)
                        .unwrap_or_else(|| v.to_string())
                })
                .unwrap_or_else(|| r.to_string());
            table.labels.push(label);
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// Result of scoring a table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTable {
    pub metrics: Vec<String>,
    pub groups: Vec<String>,
    pub labels: Vec<String>,
    pub weights: WeightVector,
    pub breakdowns: Vec<ScoreBreakdown>,
    pub objectives: Vec<f64>,
    /// Competition ranking by objective: equal objectives share a rank.
    pub ranks: Vec<usize>,
}

/// Normalize, weight and aggregate every row of a table.
pub fn score_table(
    table: &MetricTable,
    metrics: &MetricSet,
    mode: RangeSource,
    strategy: &Strategy,
    expert_alpha: f64,
) -> Result<ScoredTable> {
    strategy.validate(metrics)?;
    let trials: Vec<Trial> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| Trial::completed(i as u64, Default::default(), row.clone()))
        .collect();
    let matrix = build_matrix(&trials, metrics, mode)?;
    let entropy = metric_weights(&matrix, metrics)?;
    let weights = blend_weights(&entropy, &metrics.expert_weights(), expert_alpha, metrics)?;
    let breakdowns = score_matrix(&matrix, &weights, metrics, strategy)?;
    let objectives: Vec<f64> = breakdowns
        .iter()
        .map(|b| objective_value(b, strategy))
        .collect();
    let ranks = objectives
        .iter()
        .map(|o| 1 + objectives.iter().filter(|x| *x > o).count())
        .collect();
    Ok(ScoredTable {
        metrics: metrics.names().map(str::to_owned).collect(),
        groups: metrics.groups().to_vec(),
        labels: table.labels.clone(),
        weights,
        breakdowns,
        objectives,
        ranks,
    })
}

impl ScoredTable {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec![
            "label".to_string(),
            "rank".into(),
            "objective".into(),
            "integral".into(),
        ];
        h.extend(self.groups.iter().map(|g| format!("sub:{g}")));
        h.extend(self.metrics.iter().map(|m| format!("norm:{m}")));
        h.extend(self.metrics.iter().map(|m| format!("weight:{m}")));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        for i in 0..self.labels.len() {
            let b = &self.breakdowns[i];
            let mut rec = vec![
                self.labels[i].clone(),
                self.ranks[i].to_string(),
                fmt_f64(self.objectives[i]),
                fmt_f64(b.integral),
            ];
            rec.extend(self.groups.iter().map(|g| fmt_f64(b.subindex_values[g])));
            rec.extend(self.metrics.iter().map(|m| fmt_f64(b.normalized[m])));
            rec.extend(
                self.metrics
                    .iter()
                    .map(|m| fmt_f64(b.metric_weights.get(m))),
            );
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn render_text(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "metric weights:")?;
        for m in &self.metrics {
            writeln!(out, "  {m:<16} {:.6}", self.weights.get(m))?;
        }
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.sort_by_key(|&i| self.ranks[i]);
        let label_w = self
            .labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        write!(
            out,
            "{:>4}  {:<label_w$}  {:>9}",
            "rank", "label", "objective"
        )?;
        for g in &self.groups {
            write!(out, "  {:>10}", truncate(g, 10))?;
        }
        for m in &self.metrics {
            write!(out, "  {:>10}", truncate(m, 10))?;
        }
        writeln!(out)?;
        for i in order {
            let b = &self.breakdowns[i];
            write!(
                out,
                "{:>4}  {:<label_w$}  {:>9.6}",
                self.ranks[i], self.labels[i], self.objectives[i]
            )?;
            for g in &self.groups {
                write!(out, "  {:>10.6}", b.subindex_values[g])?;
            }
            for m in &self.metrics {
                write!(out, "  {:>10.6}", b.normalized[m])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub fn cmd_score(args: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let spec = ScoreSpec::load(&args.spec)?;
    let metrics =
        MetricSet::new(spec.metrics.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    let table = MetricTable::read(&args.metrics, &metrics)?;
    let mode = match args.mode {
        Mode::Declared => RangeSource::Declared,
        Mode::Observed => RangeSource::Observed,
    };
    let strategy = args.strategy.clone().unwrap_or(spec.strategy);
    let scored = score_table(&table, &metrics, mode, &strategy, spec.expert_alpha)?;
    scored.render_text(out)?;
    if let Some(path) = &args.csv {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        scored.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}
