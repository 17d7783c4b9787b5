//! Deterministic stand-in for a recommender: accuracy, ranking quality,
//! diversity and resource use trade off against each other over
//! `k` (model size), `lam` (regularization) and `algo`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::evaluation::{EvalRequest, EvalResult, Evaluator};
use crate::scoring::{Direction, MetricSpec, ACCURACY, DIVERSITY, RANKING, RESOURCES};
use crate::space::{Domain, ParamSpec, ParamValue, ParamVector, SearchSpace};

pub const K_RANGE: (i64, i64) = (8, 256);
pub const LAM_RANGE: (f64, f64) = (1e-4, 1.0);
pub const ALGOS: [&str; 2] = ["als", "bpr"];

pub fn synthetic_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::new(
            "k",
            Domain::LogInteger {
                lo: K_RANGE.0,
                hi: K_RANGE.1,
            },
        ),
        ParamSpec::new(
            "lam",
            Domain::LogContinuous {
                lo: LAM_RANGE.0,
                hi: LAM_RANGE.1,
            },
        ),
        ParamSpec::new(
            "algo",
            Domain::Categorical {
                choices: ALGOS.iter().map(|s| s.to_string()).collect(),
            },
        ),
    ])
    .expect("static space is valid")
}

/// Metric specs with the reference ranges that bound every synthetic output.
pub fn synthetic_metrics() -> Vec<MetricSpec> {
    vec![
        MetricSpec::new("precision", ACCURACY, Direction::Benefit).with_range(0.0, 0.45),
        MetricSpec::new("ndcg", RANKING, Direction::Benefit).with_range(0.0, 0.5),
        MetricSpec::new("diversity", DIVERSITY, Direction::Benefit).with_range(0.0, 1.0),
        MetricSpec::new("latency_ms", RESOURCES, Direction::Cost).with_range(0.0, 250.0),
        MetricSpec::new("memory_mb", RESOURCES, Direction::Cost).with_range(0.0, 600.0),
    ]
}

/// The 12 x 12 x 2 reference grid.
pub fn reference_resolution() -> BTreeMap<String, usize> {
    BTreeMap::from([("k".to_string(), 12), ("lam".to_string(), 12)])
}

/// Evaluates the benchmark formulas.
pub fn synthetic_eval(params: &ParamVector) -> Result<EvalResult> {
    let k = match params.get("k") {
        Some(ParamValue::Int(k)) if (K_RANGE.0..=K_RANGE.1).contains(k) => *k as f64,
        other => {
            return Err(Error::InvalidValue(format!(
                "synthetic benchmark: bad k {other:?}"
            )))
        }
    };
    let lam = match params.get("lam") {
        Some(ParamValue::Float(l)) if (LAM_RANGE.0..=LAM_RANGE.1).contains(l) => *l,
        other => {
            return Err(Error::InvalidValue(format!(
                "synthetic benchmark: bad lam {other:?}"
            )))
        }
    };
    let a = match params.get("algo").and_then(ParamValue::as_str) {
        Some("als") => 0.0,
        Some("bpr") => 0.05,
        other => {
            return Err(Error::InvalidValue(format!(
                "synthetic benchmark: bad algo {other:?}"
            )))
        }
    };

    let u =
        (k.ln() - (K_RANGE.0 as f64).ln()) / ((K_RANGE.1 as f64).ln() - (K_RANGE.0 as f64).ln());
    let v = (lam.ln() - LAM_RANGE.0.ln()) / (LAM_RANGE.1.ln() - LAM_RANGE.0.ln());

    let precision = 0.10 + 0.25 * (PI * u).sin() * (1.0 - (v - 0.4).powi(2)) + a;
    let ndcg = 0.15 + 0.30 * (1.0 - (u - 0.6).powi(2)) * (1.0 - (v - 0.5).powi(2));
    let diversity = 0.90 - 0.60 * u;
    let latency_ms = 5.0 + 200.0 * u * u;
    let memory_mb = 50.0 + 500.0 * u;

    Ok(EvalResult::ok(BTreeMap::from([
        ("precision".to_string(), precision),
        ("ndcg".to_string(), ndcg),
        ("diversity".to_string(), diversity),
        ("latency_ms".to_string(), latency_ms),
        ("memory_mb".to_string(), memory_mb),
    ])))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticEvaluator;

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, request: &EvalRequest) -> Result<EvalResult> {
        let start = Instant::now();
        let mut result = match synthetic_eval(&request.params) {
            Ok(r) => r,
            Err(e) => EvalResult::failed(e.to_string()),
        };
        result.duration = start.elapsed().as_secs_f64();
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StudyRng;

    fn params(k: i64, lam: f64, algo: &str) -> ParamVector {
        ParamVector(BTreeMap::from([
            ("k".to_string(), ParamValue::Int(k)),
            ("lam".to_string(), ParamValue::Float(lam)),
            ("algo".to_string(), ParamValue::Str(algo.into())),
        ]))
    }

    #[test]
    fn boundaries() {
        let r = synthetic_eval(&params(8, 0.01, "als")).unwrap();
        assert_eq!(r.metrics["diversity"], 0.90);
        assert_eq!(r.metrics["latency_ms"], 5.0);
        assert_eq!(r.metrics["memory_mb"], 50.0);
        let r = synthetic_eval(&params(256, 0.01, "als")).unwrap();
        assert!((r.metrics["diversity"] - 0.30).abs() < 1e-12);
        assert!((r.metrics["latency_ms"] - 205.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(matches!(
            synthetic_eval(&params(7, 0.01, "als")),
            Err(Error::InvalidValue(_))
        ));
        assert!(matches!(
            synthetic_eval(&params(8, 2.0, "als")),
            Err(Error::InvalidValue(_))
        ));
        assert!(matches!(
            synthetic_eval(&params(8, 0.01, "svd")),
            Err(Error::InvalidValue(_))
        ));
        let failed = SyntheticEvaluator
            .evaluate(&EvalRequest {
                trial_id: 0,
                params: params(8, 0.01, "svd"),
            })
            .unwrap();
        assert!(!failed.is_ok());
    }

    #[test]
    fn outputs_stay_inside_reference_ranges() {
        let space = synthetic_space();
        let specs = synthetic_metrics();
        let mut rng = StudyRng::new(2024);
        for _ in 0..10_000 {
            let p = space.sample_uniform(&mut rng);
            let a = synthetic_eval(&p).unwrap();
            let b = synthetic_eval(&p).unwrap();
            assert_eq!(a, b);
            for spec in &specs {
                let (lo, hi) = spec.declared_range.unwrap();
                let v = a.metrics[&spec.name];
                assert!(
                    v >= lo && v <= hi,
                    "{} = {v} outside [{lo}, {hi}] at {p}",
                    spec.name
                );
            }
        }
    }

    #[test]
    fn reference_grid_has_288_points() {
        assert_eq!(
            synthetic_space().grid_len(&reference_resolution()).unwrap(),
            288
        );
    }
}
