//! Producing raw metrics for a configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::space::ParamVector;

mod external;
pub mod synthetic;

pub use external::{parse_response, ExternalEvaluator};
pub use synthetic::{synthetic_eval, SyntheticEvaluator};

/// Request line sent to an evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub trial_id: u64,
    pub params: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metrics: BTreeMap<String, f64>,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Seconds.
    #[serde(default)]
    pub duration: f64,
    /// Captured standard error of an external evaluator.
    #[serde(skip)]
    pub stderr: String,
}

impl EvalResult {
    pub fn ok(metrics: BTreeMap<String, f64>) -> Self {
        Self {
            metrics,
            status: EvalStatus::Ok,
            message: None,
            duration: 0.0,
            stderr: String::new(),
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            metrics: BTreeMap::new(),
            status: EvalStatus::Failed,
            message: Some(message.into()),
            duration: 0.0,
            stderr: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == EvalStatus::Ok
    }
}

/// Something that turns a configuration into raw metrics.
///
/// A failed evaluation is reported through [`EvalStatus::Failed`]; `Err` is
/// reserved for the evaluator itself being unusable
/// ([`crate::Error::EvaluatorUnavailable`]), which aborts a study.
pub trait Evaluator: Sync {
    fn evaluate(&self, request: &EvalRequest) -> Result<EvalResult>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, request: &EvalRequest) -> Result<EvalResult> {
        (**self).evaluate(request)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, request: &EvalRequest) -> Result<EvalResult> {
        (**self).evaluate(request)
    }
}
