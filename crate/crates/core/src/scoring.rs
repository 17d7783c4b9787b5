//! Composite-indicator scoring.
//!
//! Raw metric records are min-max normalized per metric (inverted for cost
//! metrics), weighted within each group by the entropy method (optionally
//! blended with expert weights), aggregated into one sub-index per group and
//! finally into a single integral value in `[0, 1]`.
//!
//! Every function here is pure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{Trial, TrialStatus};

pub const ACCURACY: &str = "accuracy";
pub const RANKING: &str = "ranking";
pub const DIVERSITY: &str = "diversity";
pub const RESOURCES: &str = "resources";

/// Default weight of the dominant group under [`Strategy::Dominant`].
pub const DEFAULT_DOMINANCE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Larger is better.
    Benefit,
    /// Larger is worse; normalized inversely.
    Cost,
}

/// Declaration of one raw metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub group: String,
    pub direction: Direction,
    #[serde(default, rename = "range", skip_serializing_if = "Option::is_none")]
    pub declared_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_weight: Option<f64>,
}

impl MetricSpec {
    pub fn new(name: impl Into<String>, group: impl Into<String>, direction: Direction) -> Self {
        Self {
            name: name.into(),
            group: group.into(),
            direction,
            declared_range: None,
            expert_weight: None,
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.declared_range = Some((lo, hi));
        self
    }

    pub fn with_expert_weight(mut self, weight: f64) -> Self {
        self.expert_weight = Some(weight);
        self
    }
}

/// A validated, ordered collection of metric specs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSet {
    specs: Vec<MetricSpec>,
    groups: Vec<String>,
}

impl MetricSet {
    pub fn new(specs: Vec<MetricSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("at least one metric must be declared".into()));
        }
        let mut groups: Vec<String> = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            if spec.name.is_empty() || spec.group.is_empty() {
                return Err(Error::Config(
                    "metric names and groups must be non-empty".into(),
                ));
            }
            if specs[..i].iter().any(|s| s.name == spec.name) {
                return Err(Error::Config(format!("duplicate metric `{}`", spec.name)));
            }
            if let Some((lo, hi)) = spec.declared_range {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Config(format!(
                        "metric `{}` has an invalid range [{lo}, {hi}]",
                        spec.name
                    )));
                }
            }
            if let Some(w) = spec.expert_weight {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidValue(format!(
                        "expert weight {w} for metric `{}`",
                        spec.name
                    )));
                }
            }
            if !groups.contains(&spec.group) {
                groups.push(spec.group.clone());
            }
        }
        Ok(Self { specs, groups })
    }

    pub fn specs(&self) -> &[MetricSpec] {
        &self.specs
    }

    /// Non-empty groups in order of first declaration.
    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn get(&self, name: &str) -> Option<&MetricSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn in_group<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a MetricSpec> + 'a {
        self.specs.iter().filter(move |s| s.group == group)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Expert weights declared on the specs, keyed by metric name.
    pub fn expert_weights(&self) -> BTreeMap<String, f64> {
        self.specs
            .iter()
            .filter_map(|s| s.expert_weight.map(|w| (s.name.clone(), w)))
            .collect()
    }
}

/// Maps a raw value onto `[0, 1]`, inverting cost metrics.
///
/// A degenerate range (`lo == hi`) carries no information and maps to 0.5.
pub fn normalize_metric(value: f64, lo: f64, hi: f64, direction: Direction) -> Result<f64> {
    if !(value.is_finite() && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "non-finite normalization input ({value}, {lo}, {hi})"
        )));
    }
    if lo > hi {
        return Err(Error::InvalidValue(format!(
            "range [{lo}, {hi}] is inverted"
        )));
    }
    if hi == lo {
        return Ok(0.5);
    }
    let x = match direction {
        Direction::Benefit => (value - lo) / (hi - lo),
        Direction::Cost => (hi - value) / (hi - lo),
    };
    Ok(x.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSource {
    /// Each metric's declared range.
    Declared,
    /// Per-column min/max over the supplied trials.
    Observed,
}

/// Normalized metric values, one row per completed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    pub rows: Vec<u64>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub range_source: RangeSource,
    /// Range actually used for each column.
    pub ranges: Vec<(f64, f64)>,
    /// `(row, col)` cells whose raw value fell outside the range.
    pub clamped: Vec<(usize, usize)>,
}

impl NormalizedMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    pub fn row_map(&self, i: usize) -> BTreeMap<String, f64> {
        self.cols
            .iter()
            .cloned()
            .zip(self.values[i].iter().copied())
            .collect()
    }
}

/// Builds the normalized matrix over the completed trials; failed trials are skipped.
pub fn build_matrix(
    trials: &[Trial],
    metrics: &MetricSet,
    mode: RangeSource,
) -> Result<NormalizedMatrix> {
    let completed: Vec<&Trial> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .collect();
    if completed.is_empty() {
        return Err(Error::EmptyStudy);
    }

    let mut raw = vec![Vec::with_capacity(metrics.specs().len()); completed.len()];
    for (row, trial) in raw.iter_mut().zip(&completed) {
        for spec in metrics.specs() {
            let v = *trial.metrics.get(&spec.name).ok_or_else(|| {
                Error::InvalidValue(format!(
                    "trial {} is missing metric `{}`",
                    trial.id, spec.name
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidValue(format!(
                    "trial {} reports non-finite `{}`",
                    trial.id, spec.name
                )));
            }
            row.push(v);
        }
    }

    let ranges = metrics
        .specs()
        .iter()
        .enumerate()
        .map(|(j, spec)| match mode {
            RangeSource::Declared => spec
                .declared_range
                .ok_or_else(|| Error::MissingRange(spec.name.clone())),
            RangeSource::Observed => Ok(raw
                .iter()
                .map(|r| r[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clamped = Vec::new();
    let mut values = Vec::with_capacity(raw.len());
    for (i, row) in raw.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (j, (&v, spec)) in row.iter().zip(metrics.specs()).enumerate() {
            let (lo, hi) = ranges[j];
            if v < lo || v > hi {
                clamped.push((i, j));
            }
            out.push(normalize_metric(v, lo, hi, spec.direction)?);
        }
        values.push(out);
    }

    Ok(NormalizedMatrix {
        rows: completed.iter().map(|t| t.id).collect(),
        cols: metrics.names().map(str::to_owned).collect(),
        values,
        range_source: mode,
        ranges,
        clamped,
    })
}

/// Per-metric weights; within every group they form a simplex.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector {
    pub weights: BTreeMap<String, f64>,
}

impl WeightVector {
    pub fn get(&self, metric: &str) -> f64 {
        self.weights.get(metric).copied().unwrap_or(0.0)
    }

    /// Equal weights within each group.
    pub fn equal(metrics: &MetricSet) -> Self {
        let mut weights = BTreeMap::new();
        for group in metrics.groups() {
            let members: Vec<_> = metrics.in_group(group).collect();
            let w = 1.0 / members.len() as f64;
            for m in members {
                weights.insert(m.name.clone(), w);
            }
        }
        Self { weights }
    }
}

/// Entropy-method weights for a set of columns with values in `[0, 1]`.
///
/// Constant columns get zero divergence; if nothing varies (or there is a
/// single column) the weights are equal.
pub fn entropy_column_weights(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = columns.len();
    if n == 0 {
        return Err(Error::InsufficientData("no columns".into()));
    }
    let m = columns[0].len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "entropy weights need at least 2 rows, got {m}"
        )));
    }
    let ln_m = (m as f64).ln();
    let mut divergence = Vec::with_capacity(n);
    for col in columns {
        if col.len() != m {
            return Err(Error::InvalidValue("ragged matrix".into()));
        }
        if col.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidValue(
                "entropy input must be finite and non-negative".into(),
            ));
        }
        if col.iter().all(|&x| x == col[0]) {
            divergence.push(0.0);
            continue;
        }
        let total: f64 = col.iter().sum();
        let h: f64 = col
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| {
                let p = x / total;
                p * p.ln()
            })
            .sum();
        let e = -h / ln_m;
        divergence.push((1.0 - e).max(0.0));
    }
    let sum: f64 = divergence.iter().sum();
    if n == 1 || sum <= 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    Ok(divergence.into_iter().map(|d| d / sum).collect())
}

/// Entropy-method weights for the metrics of one group.
pub fn entropy_weights(
    matrix: &NormalizedMatrix,
    metrics: &MetricSet,
    group: &str,
) -> Result<WeightVector> {
    let names: Vec<&str> = metrics.in_group(group).map(|s| s.name.as_str()).collect();
    if names.is_empty() {
        return Err(Error::InvalidValue(format!(
            "group `{group}` has no metrics"
        )));
    }
    let columns = names
        .iter()
        .map(|name| {
            matrix
                .col_index(name)
                .map(|j| matrix.column(j))
                .ok_or_else(|| Error::InvalidValue(format!("matrix has no column `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = entropy_column_weights(&columns)?;
    Ok(WeightVector {
        weights: names.into_iter().map(str::to_owned).zip(w).collect(),
    })
}

/// Entropy weights for every group, or equal weights when the matrix has fewer than two rows.
pub fn metric_weights(matrix: &NormalizedMatrix, metrics: &MetricSet) -> Result<WeightVector> {
    if matrix.n_rows() < 2 {
        return Ok(WeightVector::equal(metrics));
    }
    let mut weights = BTreeMap::new();
    for group in metrics.groups() {
        weights.extend(entropy_weights(matrix, metrics, group)?.weights);
    }
    Ok(WeightVector { weights })
}

/// Mixes expert weights into entropy weights group by group:
/// `alpha * expert + (1 - alpha) * entropy`.
pub fn blend_weights(
    entropy: &WeightVector,
    expert: &BTreeMap<String, f64>,
    alpha: f64,
    metrics: &MetricSet,
) -> Result<WeightVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidValue(format!(
            "blend alpha {alpha} outside [0, 1]"
        )));
    }
    if let Some((name, w)) = expert.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidValue(format!(
            "expert weight {w} for `{name}`"
        )));
    }
    if let Some(name) = expert.keys().find(|k| metrics.get(k).is_none()) {
        return Err(Error::InvalidValue(format!(
            "expert weight for unknown metric `{name}`"
        )));
    }
    let mut out = entropy.clone();
    for group in metrics.groups() {
        let members: Vec<&str> = metrics.in_group(group).map(|s| s.name.as_str()).collect();
        let given = members.iter().filter(|m| expert.contains_key(**m)).count();
        if given == 0 {
            continue;
        }
        if given < members.len() {
            return Err(Error::PartialExpertWeights(group.clone()));
        }
        let total: f64 = members.iter().map(|m| expert[*m]).sum();
        if total <= 0.0 {
            return Err(Error::InvalidValue(format!(
                "expert weights for group `{group}` sum to zero"
            )));
        }
        for m in members {
            let w = alpha * expert[m] / total + (1.0 - alpha) * entropy.get(m);
            out.weights.insert(m.to_owned(), w);
        }
    }
    Ok(out)
}

/// Weighted sum of the normalized values within each group.
pub fn subindex_scores(
    row: &BTreeMap<String, f64>,
    weights: &WeightVector,
    metrics: &MetricSet,
) -> BTreeMap<String, f64> {
    metrics
        .groups()
        .iter()
        .map(|group| {
            let s: f64 = metrics
                .in_group(group)
                .map(|spec| weights.get(&spec.name) * row.get(&spec.name).copied().unwrap_or(0.0))
                .sum();
            (group.clone(), s.clamp(0.0, 1.0))
        })
        .collect()
}

/// How sub-indexes are combined into the objective.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Equal weight for every group.
    #[default]
    Balanced,
    /// One group gets `dominance`, the rest share the remainder evenly.
    Dominant {
        dominant_group: String,
        #[serde(default = "default_dominance")]
        dominance: f64,
    },
    /// The objective is one normalized metric.
    Single { target_metric: String },
    /// Explicit group weights, normalized to sum to one.
    Weighted {
        group_weights: BTreeMap<String, f64>,
    },
}

fn default_dominance() -> f64 {
    DEFAULT_DOMINANCE
}

impl Strategy {
    pub fn validate(&self, metrics: &MetricSet) -> Result<()> {
        match self {
            Strategy::Balanced => Ok(()),
            Strategy::Single { target_metric } => match metrics.get(target_metric) {
                Some(_) => Ok(()),
                None => Err(Error::Config(format!(
                    "unknown target metric `{target_metric}`"
                ))),
            },
            _ => strategy_subindex_weights(self, metrics.groups()).map(|_| ()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Balanced => "balanced".into(),
            Strategy::Dominant {
                dominant_group,
                dominance,
            } => format!("dominant:{dominant_group}:{dominance}"),
            Strategy::Single { target_metric } => format!("single:{target_metric}"),
            Strategy::Weighted { .. } => "weighted".into(),
        }
    }
}

/// Group weights implied by a strategy.
///
/// `Single` does not aggregate groups; it reports the balanced split so the
/// breakdown still carries a meaningful integral.
pub fn strategy_subindex_weights(
    strategy: &Strategy,
    groups: &[String],
) -> Result<BTreeMap<String, f64>> {
    let g = groups.len();
    if g == 0 {
        return Err(Error::DegenerateStrategy("no groups".into()));
    }
    let balanced = || {
        groups
            .iter()
            .map(|name| (name.clone(), 1.0 / g as f64))
            .collect()
    };
    match strategy {
        Strategy::Balanced | Strategy::Single { .. } => Ok(balanced()),
        Strategy::Dominant {
            dominant_group,
            dominance,
        } => {
            if !groups.contains(dominant_group) {
                return Err(Error::Config(format!(
                    "unknown dominant group `{dominant_group}`"
                )));
            }
            if g == 1 {
                return Err(Error::DegenerateStrategy(
                    "dominant strategy needs at least two groups".into(),
                ));
            }
            let lower = 1.0 / g as f64;
            if !(*dominance > lower && *dominance < 1.0) {
                return Err(Error::InvalidValue(format!(
                    "dominance {dominance} outside ({lower}, 1) for {g} groups"
                )));
            }
            let rest = (1.0 - dominance) / (g - 1) as f64;
            Ok(groups
                .iter()
                .map(|name| {
                    (
                        name.clone(),
                        if name == dominant_group {
                            *dominance
                        } else {
                            rest
                        },
                    )
                })
                .collect())
        }
        Strategy::Weighted { group_weights } => {
            if let Some(k) = group_weights.keys().find(|k| !groups.contains(k)) {
                return Err(Error::Config(format!("weight for unknown group `{k}`")));
            }
            if group_weights
                .values()
                .any(|w| !(w.is_finite() && *w >= 0.0))
            {
                return Err(Error::InvalidValue(
                    "group weights must be finite and non-negative".into(),
                ));
            }
            let total: f64 = groups
                .iter()
                .map(|name| group_weights.get(name).copied().unwrap_or(0.0))
                .sum();
            if total <= 0.0 {
                return Err(Error::DegenerateStrategy(
                    "group weights sum to zero".into(),
                ));
            }
            Ok(groups
                .iter()
                .map(|name| {
                    (
                        name.clone(),
                        group_weights.get(name).copied().unwrap_or(0.0) / total,
                    )
                })
                .collect())
        }
    }
}

/// Full scoring record for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub normalized: BTreeMap<String, f64>,
    pub metric_weights: WeightVector,
    pub subindex_values: BTreeMap<String, f64>,
    pub subindex_weights: BTreeMap<String, f64>,
    pub integral: f64,
    /// Metrics whose raw value was clamped into the range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped: Vec<String>,
}

impl ScoreBreakdown {
    pub fn new(
        normalized: BTreeMap<String, f64>,
        metric_weights: &WeightVector,
        metrics: &MetricSet,
        subindex_weights: BTreeMap<String, f64>,
    ) -> Self {
        let subindex_values = subindex_scores(&normalized, metric_weights, metrics);
        let integral = integral_value(&subindex_values, &subindex_weights);
        Self {
            normalized,
            metric_weights: metric_weights.clone(),
            subindex_values,
            subindex_weights,
            integral,
            clamped: Vec::new(),
        }
    }
}

/// Weighted sum of sub-index values, clamped to `[0, 1]` against rounding.
pub fn integral_value(
    subindex_values: &BTreeMap<String, f64>,
    subindex_weights: &BTreeMap<String, f64>,
) -> f64 {
    subindex_values
        .iter()
        .map(|(g, v)| subindex_weights.get(g).copied().unwrap_or(0.0) * v)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// The scalar that optimizers maximize.
pub fn objective_value(breakdown: &ScoreBreakdown, strategy: &Strategy) -> f64 {
    match strategy {
        Strategy::Single { target_metric } => breakdown
            .normalized
            .get(target_metric)
            .copied()
            .unwrap_or(0.0),
        _ => breakdown.integral,
    }
}

/// Breakdowns for every row of a matrix under fixed metric weights.
pub fn score_matrix(
    matrix: &NormalizedMatrix,
    weights: &WeightVector,
    metrics: &MetricSet,
    strategy: &Strategy,
) -> Result<Vec<ScoreBreakdown>> {
    let subindex_weights = strategy_subindex_weights(strategy, metrics.groups())?;
    Ok((0..matrix.n_rows())
        .map(|i| {
            let mut b = ScoreBreakdown::new(
                matrix.row_map(i),
                weights,
                metrics,
                subindex_weights.clone(),
            );
            b.clamped = matrix
                .clamped
                .iter()
                .filter(|(r, _)| *r == i)
                .map(|(_, c)| matrix.cols[*c].clone())
                .collect();
            b
        })
        .collect())
}
