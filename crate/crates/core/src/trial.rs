use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scoring::ScoreBreakdown;
use crate::space::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed,
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: u64,
    pub params: ParamVector,
    pub metrics: BTreeMap<String, f64>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Wall-clock evaluation time in seconds.
    #[serde(default)]
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<ScoreBreakdown>,
    /// Objective under the study strategy; 0 for failed trials.
    #[serde(default)]
    pub objective: f64,
}

impl Trial {
    pub fn completed(id: u64, params: ParamVector, metrics: BTreeMap<String, f64>) -> Self {
        Self {
            id,
            params,
            metrics,
            status: TrialStatus::Complete,
            message: None,
            duration: 0.0,
            breakdown: None,
            objective: 0.0,
        }
    }

    pub fn failed(id: u64, params: ParamVector, message: String) -> Self {
        Self {
            id,
            params,
            metrics: BTreeMap::new(),
            status: TrialStatus::Failed,
            message: Some(message),
            duration: 0.0,
            breakdown: None,
            objective: 0.0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == TrialStatus::Complete
    }
}
