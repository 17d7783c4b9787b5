use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{Evaluator, ExternalEvaluator, SyntheticEvaluator};
use crate::optimizer::OptimizerConfig;
use crate::scoring::{MetricSet, MetricSpec, RangeSource, Strategy};
use crate::space::SearchSpace;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Fixed declared ranges per metric.
    #[default]
    Declared,
    /// Observed min/max over all completed trials, recomputed on every rescoring.
    Adaptive,
}

impl NormalizationMode {
    pub fn range_source(self) -> RangeSource {
        match self {
            NormalizationMode::Declared => RangeSource::Declared,
            NormalizationMode::Adaptive => RangeSource::Observed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMode {
    /// Equal weights for the first `n_calibration` trials, then entropy
    /// weights over those trials, frozen for the rest of the study.
    FixedAfterCalibration {
        #[serde(default = "default_calibration")]
        n_calibration: usize,
    },
    /// Entropy weights over all completed trials, recomputed every time.
    Adaptive,
}

fn default_calibration() -> usize {
    20
}

impl Default for WeightMode {
    fn default() -> Self {
        WeightMode::FixedAfterCalibration {
            n_calibration: default_calibration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    /// Built-in recommender benchmark.
    #[default]
    Synthetic,
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    60.0
}

impl EvaluatorConfig {
    pub fn build(&self, metrics: &[MetricSpec]) -> Result<Box<dyn Evaluator + Send>> {
        match self {
            EvaluatorConfig::Synthetic => Ok(Box::new(SyntheticEvaluator)),
            EvaluatorConfig::External {
                command,
                timeout_secs,
            } => {
                if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                    return Err(Error::Config(format!(
                        "evaluator timeout {timeout_secs} must be positive"
                    )));
                }
                Ok(Box::new(ExternalEvaluator::new(
                    command.clone(),
                    Duration::from_secs_f64(*timeout_secs),
                    metrics.iter().map(|m| m.name.clone()).collect(),
                )?))
            }
        }
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.5
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// Complete definition of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub metrics: Vec<MetricSpec>,
    pub space: SearchSpace,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub budget: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub normalization_mode: NormalizationMode,
    #[serde(default)]
    pub weight_mode: WeightMode,
    /// Share of expert weights when blending with entropy weights.
    #[serde(default = "default_alpha")]
    pub expert_alpha: f64,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
}

impl StudyConfig {
    pub fn new(
        metrics: Vec<MetricSpec>,
        space: SearchSpace,
        optimizer: OptimizerConfig,
        budget: usize,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            metrics,
            space,
            strategy: Strategy::Balanced,
            optimizer,
            budget,
            parallelism: 1,
            seed: 0,
            normalization_mode: NormalizationMode::Declared,
            weight_mode: WeightMode::default(),
            expert_alpha: 0.5,
            evaluator: EvaluatorConfig::Synthetic,
        }
    }

    /// Checks every cross-field invariant; returns the validated metric set.
    pub fn validate(&self) -> Result<MetricSet> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let metrics = MetricSet::new(self.metrics.clone()).map_err(cfg)?;
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.expert_alpha) {
            return Err(Error::Config(format!(
                "expert_alpha {} outside [0, 1]",
                self.expert_alpha
            )));
        }
        if self.normalization_mode == NormalizationMode::Declared {
            if let Some(m) = self.metrics.iter().find(|m| m.declared_range.is_none()) {
                return Err(Error::Config(format!(
                    "declared normalization needs a range for metric `{}`",
                    m.name
                )));
            }
        }
        if let WeightMode::FixedAfterCalibration { n_calibration } = self.weight_mode {
            if n_calibration == 0 || n_calibration > self.budget {
                return Err(Error::Config(format!(
                    "n_calibration {n_calibration} must lie in [1, budget = {}]",
                    self.budget
                )));
            }
        }
        // expert weights must cover whole groups
        let expert = metrics.expert_weights();
        if !expert.is_empty() {
            crate::scoring::blend_weights(
                &crate::scoring::WeightVector::equal(&metrics),
                &expert,
                self.expert_alpha,
                &metrics,
            )
            .map_err(cfg)?;
        }
        self.strategy.validate(&metrics).map_err(cfg)?;
        self.optimizer.validate(&self.space).map_err(cfg)?;
        Ok(metrics)
    }
}
