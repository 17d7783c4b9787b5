//! Multi-criteria hyperparameter optimization driven by a composite
//! (integral) indicator.
//!
//! Raw metrics of each trial are normalized, weighted with the entropy
//! method inside their group, aggregated into sub-indexes and combined into
//! one objective. Grid, random, TPE and separable CMA-ES searchers maximize
//! that objective; studies persist to disk and can be resumed.

pub mod error;
pub mod evaluation;
pub mod optimizer;
pub mod rng;
pub mod scoring;
pub mod space;
pub mod study;
pub mod trial;

pub use error::{Error, Result};
pub use rng::StudyRng;
pub use scoring::{
    Direction, MetricSet, MetricSpec, RangeSource, ScoreBreakdown, Strategy, WeightVector,
};
pub use space::{Domain, ParamSpec, ParamValue, ParamVector, SearchSpace};
pub use study::{load_study, run_study, Study, StudyConfig, StudyState};
pub use trial::{Trial, TrialStatus};
