use std::collections::BTreeMap;
use std::fs;
use std::time::Duration;

use integral::evaluation::synthetic::{
    reference_resolution, synthetic_eval, synthetic_metrics, synthetic_space,
};
use integral::evaluation::{
    EvalRequest, EvalResult, Evaluator, ExternalEvaluator, SyntheticEvaluator,
};
use integral::optimizer::{OptimizerConfig, SepCmaConfig, TpeConfig};
use integral::study::store::TRIALS_FILE;
use integral::study::{load_study, rescore_history, NormalizationMode, WeightMode};
use integral::{
    Direction, Domain, Error, MetricSpec, ParamSpec, SearchSpace, Study, StudyConfig, Trial,
};
use proptest::prelude::*;
use tempfile::tempdir;

fn synthetic(optimizer: OptimizerConfig, budget: usize, seed: u64) -> StudyConfig {
    let mut c = StudyConfig::new(synthetic_metrics(), synthetic_space(), optimizer, budget);
    c.seed = seed;
    c.weight_mode = WeightMode::FixedAfterCalibration {
        n_calibration: budget.min(10),
    };
    c
}

fn tpe() -> OptimizerConfig {
    OptimizerConfig::Tpe(TpeConfig {
        n_startup: 8,
        ..TpeConfig::default()
    })
}

/// Trials without wall-clock durations.
fn timeless(trials: &[Trial]) -> Vec<Trial> {
    trials
        .iter()
        .cloned()
        .map(|t| Trial { duration: 0.0, ..t })
        .collect()
}

fn run(study: &mut Study) {
    study.run(&SyntheticEvaluator, |_| {}).unwrap();
}

#[test]
fn six_point_grid_stops_at_budget() {
    let space = SearchSpace::new(vec![
        ParamSpec::new("x", Domain::Continuous { lo: 0.0, hi: 1.0 }),
        ParamSpec::new(
            "c",
            Domain::Categorical {
                choices: vec!["a".into(), "b".into()],
            },
        ),
    ])
    .unwrap();
    let metrics = vec![MetricSpec::new("y", "accuracy", Direction::Benefit).with_range(0.0, 1.0)];
    let optimizer = OptimizerConfig::Grid {
        resolution: BTreeMap::from([("x".to_string(), 3)]),
    };
    struct Eval;
    impl Evaluator for Eval {
        fn evaluate(&self, r: &EvalRequest) -> integral::Result<EvalResult> {
            Ok(EvalResult::ok(BTreeMap::from([(
                "y".to_string(),
                r.params.f64("x").unwrap(),
            )])))
        }
    }
    for budget in [6, 10] {
        let mut config =
            StudyConfig::new(metrics.clone(), space.clone(), optimizer.clone(), budget);
        config.weight_mode = WeightMode::Adaptive;
        let mut study = Study::new(config).unwrap();
        let mut calls = 0;
        study.run(&Eval, |_| calls += 1).unwrap();
        assert_eq!(study.trials().len(), 6);
        assert_eq!(calls, 6);
        assert!(study.trials().iter().all(Trial::is_complete));
    }
}

#[test]
fn serial_runs_are_deterministic() {
    for optimizer in [OptimizerConfig::Random, tpe()] {
        let a =
            integral::run_study(synthetic(optimizer.clone(), 25, 11), &SyntheticEvaluator).unwrap();
        let b =
            integral::run_study(synthetic(optimizer.clone(), 25, 11), &SyntheticEvaluator).unwrap();
        assert_eq!(timeless(&a.trials), timeless(&b.trials));
        let c = integral::run_study(synthetic(optimizer, 25, 12), &SyntheticEvaluator).unwrap();
        assert_ne!(a.trials[0].params, c.trials[0].params);
    }
}

#[test]
fn parallel_batches_keep_the_suggestion_sequence() {
    let mut serial = synthetic(OptimizerConfig::Random, 24, 3);
    serial.weight_mode = WeightMode::FixedAfterCalibration { n_calibration: 24 };
    let mut parallel = serial.clone();
    parallel.parallelism = 4;
    let a = integral::run_study(serial, &SyntheticEvaluator).unwrap();
    let b = integral::run_study(parallel, &SyntheticEvaluator).unwrap();
    let pa: Vec<_> = a.trials.iter().map(|t| &t.params).collect();
    let pb: Vec<_> = b.trials.iter().map(|t| &t.params).collect();
    assert_eq!(pa, pb);

    let grid = OptimizerConfig::Grid {
        resolution: reference_resolution(),
    };
    let mut c = synthetic(grid, 288, 0);
    let serial = integral::run_study(c.clone(), &SyntheticEvaluator).unwrap();
    c.parallelism = 5;
    let parallel = integral::run_study(c, &SyntheticEvaluator).unwrap();
    assert_eq!(timeless(&serial.trials), timeless(&parallel.trials));
}

#[test]
fn calibration_freezes_weights_and_rescores_once() {
    let mut config = synthetic(OptimizerConfig::Random, 30, 5);
    config.weight_mode = WeightMode::FixedAfterCalibration { n_calibration: 12 };
    let mut study = Study::new(config).unwrap();
    run(&mut study);
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut frozen_at = None;
    let state = study.state().clone();
    let w = state.frozen_weights.clone().expect("frozen");

    // replaying prefixes shows the weights switch exactly at trial 12
    for n in 1..=state.trials.len() {
        let mut prefix = state.clone();
        prefix.trials.truncate(n);
        rescore_history(&mut prefix).unwrap();
        if prefix.frozen_weights.is_some() && frozen_at.is_none() {
            frozen_at = Some(n);
        }
        if n >= 12 {
            assert_eq!(prefix.frozen_weights.as_ref(), Some(&w));
            snapshots.push(prefix.trials.iter().map(|t| t.objective).collect());
        } else {
            let b = prefix.trials[0].breakdown.as_ref().unwrap();
            assert!(
                (b.metric_weights.get("latency_ms") - 0.5).abs() < 1e-15,
                "equal weights during calibration"
            );
        }
    }
    assert_eq!(frozen_at, Some(12));
    // stationarity: declared ranges + frozen weights never change a trial's objective
    for pair in snapshots.windows(2) {
        assert_eq!(&pair[1][..pair[0].len()], &pair[0][..]);
    }
    assert_eq!(
        snapshots.last().unwrap(),
        &state.trials.iter().map(|t| t.objective).collect::<Vec<_>>()
    );
}

#[test]
fn single_trial_adaptive_scores_half() {
    let mut config = synthetic(OptimizerConfig::Random, 1, 0);
    config.normalization_mode = NormalizationMode::Adaptive;
    config.weight_mode = WeightMode::Adaptive;
    let state = integral::run_study(config, &SyntheticEvaluator).unwrap();
    let b = state.trials[0].breakdown.as_ref().unwrap();
    assert!(b.normalized.values().all(|v| *v == 0.5));
    assert!((b.integral - 0.5).abs() < 1e-15);
}

#[test]
fn adaptive_normalization_is_not_stationary() {
    let mut config = synthetic(OptimizerConfig::Random, 15, 2);
    config.normalization_mode = NormalizationMode::Adaptive;
    config.weight_mode = WeightMode::Adaptive;
    let state = integral::run_study(config, &SyntheticEvaluator).unwrap();
    let mut prefix = state.clone();
    prefix.trials.truncate(5);
    rescore_history(&mut prefix).unwrap();
    let changed = (0..5).any(|i| prefix.trials[i].objective != state.trials[i].objective);
    assert!(changed);
}

#[test]
fn rescore_of_all_failed_history_is_empty() {
    let mut config = synthetic(OptimizerConfig::Random, 3, 0);
    config.weight_mode = WeightMode::Adaptive;
    let mut state = integral::Study::new(config).unwrap().into_state();
    state.trials.push(Trial::failed(
        0,
        synthetic_space().sample_uniform(&mut integral::StudyRng::new(0)),
        "x".into(),
    ));
    assert!(matches!(
        rescore_history(&mut state),
        Err(Error::EmptyStudy)
    ));
}

#[test]
fn failed_trials_count_against_budget_and_score_zero() {
    struct Flaky;
    impl Evaluator for Flaky {
        fn evaluate(&self, r: &EvalRequest) -> integral::Result<EvalResult> {
            if r.trial_id % 3 == 1 {
                Ok(EvalResult::failed("flaky"))
            } else if r.trial_id % 3 == 2 {
                // success without one metric
                let mut e = synthetic_eval(&r.params)?;
                e.metrics.remove("ndcg");
                Ok(e)
            } else {
                synthetic_eval(&r.params)
            }
        }
    }
    let mut study = Study::new(synthetic(tpe(), 12, 4)).unwrap();
    study.run(&Flaky, |_| {}).unwrap();
    assert_eq!(study.trials().len(), 12);
    for t in study.trials() {
        if t.id % 3 == 0 {
            assert!(t.is_complete());
        } else {
            assert!(!t.is_complete());
            assert_eq!(t.objective, 0.0);
            assert!(t.breakdown.is_none());
        }
    }
    assert!(study.trials()[2].message.as_ref().unwrap().contains("ndcg"));
}

#[test]
fn unavailable_evaluator_aborts_with_history_kept() {
    struct Dies;
    impl Evaluator for Dies {
        fn evaluate(&self, r: &EvalRequest) -> integral::Result<EvalResult> {
            if r.trial_id == 3 {
                Err(Error::EvaluatorUnavailable("gone".into()))
            } else {
                synthetic_eval(&r.params)
            }
        }
    }
    let dir = tempdir().unwrap();
    let mut study = Study::create(synthetic(OptimizerConfig::Random, 10, 1), dir.path()).unwrap();
    assert!(matches!(
        study.run(&Dies, |_| {}),
        Err(Error::EvaluatorUnavailable(_))
    ));
    assert_eq!(study.trials().len(), 3);
    assert_eq!(load_study(dir.path()).unwrap().state.trials.len(), 3);
    let log = fs::read_to_string(dir.path().join("study.log")).unwrap();
    assert!(log.contains("gone"));

    let (mut resumed, _) = Study::resume(dir.path(), None).unwrap();
    run(&mut resumed);
    let fresh = integral::run_study(
        synthetic(OptimizerConfig::Random, 10, 1),
        &SyntheticEvaluator,
    )
    .unwrap();
    assert_eq!(timeless(&resumed.state().trials), timeless(&fresh.trials));
}

#[test]
fn missing_external_program_is_unavailable() {
    let metrics = synthetic_metrics();
    let names = metrics.iter().map(|m| m.name.clone()).collect();
    let ev = ExternalEvaluator::new(
        vec!["/nonexistent/evaluator".into()],
        Duration::from_secs(1),
        names,
    )
    .unwrap();
    let mut study = Study::new(synthetic(OptimizerConfig::Random, 3, 0)).unwrap();
    assert!(matches!(
        study.run(&ev, |_| {}),
        Err(Error::EvaluatorUnavailable(_))
    ));
    assert!(study.trials().is_empty());
}

#[test]
fn persisted_study_round_trips() {
    let dir = tempdir().unwrap();
    let mut study = Study::create(synthetic(tpe(), 10, 9), dir.path()).unwrap();
    run(&mut study);
    let loaded = load_study(dir.path()).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(&loaded.state, study.state());
    let lines = fs::read_to_string(dir.path().join(TRIALS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 10);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "schema_version",
            "trial_id",
            "params",
            "metrics",
            "status",
            "duration",
            "breakdown",
            "objective",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn torn_last_line_is_dropped_with_warning() {
    let dir = tempdir().unwrap();
    let mut study = Study::create(synthetic(OptimizerConfig::Random, 10, 9), dir.path()).unwrap();
    run(&mut study);
    let path = dir.path().join(TRIALS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let cut = text.trim_end().rfind('\n').unwrap() + 20;
    fs::write(&path, &text[..cut]).unwrap();

    let loaded = load_study(dir.path()).unwrap();
    assert_eq!(loaded.state.trials.len(), 9);
    assert_eq!(loaded.warnings.len(), 1);
    assert_eq!(
        fs::read_to_string(&path).unwrap().len(),
        cut,
        "load does not modify the directory"
    );

    let (mut resumed, warnings) = Study::resume(dir.path(), None).unwrap();
    assert_eq!(warnings.len(), 1);
    run(&mut resumed);
    assert_eq!(
        timeless(&resumed.state().trials),
        timeless(&study.state().trials)
    );
    assert_eq!(load_study(dir.path()).unwrap().state.trials.len(), 10);
    assert!(fs::read_to_string(dir.path().join("study.log"))
        .unwrap()
        .contains("warning"));
}

#[test]
fn corrupt_middle_line_and_future_versions_are_rejected() {
    let dir = tempdir().unwrap();
    let mut study = Study::create(synthetic(OptimizerConfig::Random, 5, 9), dir.path()).unwrap();
    run(&mut study);
    let path = dir.path().join(TRIALS_FILE);
    let text = fs::read_to_string(&path).unwrap();

    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{garbage";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(load_study(dir.path()), Err(Error::Corrupt { .. })));

    fs::write(
        &path,
        text.replacen("\"schema_version\":1", "\"schema_version\":7", 1),
    )
    .unwrap();
    assert!(matches!(
        load_study(dir.path()),
        Err(Error::UnsupportedVersion {
            found: 7,
            expected: 1
        })
    ));

    fs::write(&path, &text).unwrap();
    let cfg = dir.path().join("config.json");
    let c = fs::read_to_string(&cfg).unwrap();
    fs::write(
        &cfg,
        c.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1),
    )
    .unwrap();
    assert!(matches!(
        load_study(dir.path()),
        Err(Error::UnsupportedVersion { found: 2, .. })
    ));
}

#[test]
fn tampered_history_fails_replay() {
    let dir = tempdir().unwrap();
    let mut study = Study::create(synthetic(OptimizerConfig::Random, 5, 9), dir.path()).unwrap();
    run(&mut study);
    let path = dir.path().join(TRIALS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let first = study.trials()[1].params.get("algo").unwrap().to_string();
    let other = if first == "bpr" { "als" } else { "bpr" };
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[1] = lines[1].replacen(
        &format!("\"algo\":\"{first}\""),
        &format!("\"algo\":\"{other}\""),
        1,
    );
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(
        load_study(dir.path()),
        Err(Error::ReplayMismatch(_))
    ));
}

#[test]
fn existing_study_directory_is_not_overwritten() {
    let dir = tempdir().unwrap();
    let mut study = Study::create(synthetic(OptimizerConfig::Random, 3, 0), dir.path()).unwrap();
    run(&mut study);
    assert!(matches!(
        Study::create(synthetic(OptimizerConfig::Random, 3, 0), dir.path()),
        Err(Error::Config(_))
    ));
}

fn resume_matches(optimizer: OptimizerConfig, seed: u64, first: usize, total: usize) {
    let config = synthetic(optimizer, total, seed);
    let full = integral::run_study(config.clone(), &SyntheticEvaluator).unwrap();

    let dir = tempdir().unwrap();
    let mut short = config;
    short.budget = first;
    let mut study = Study::create(short, dir.path()).unwrap();
    run(&mut study);
    drop(study);
    let (mut resumed, _) = Study::resume(dir.path(), Some(total)).unwrap();
    run(&mut resumed);
    assert_eq!(timeless(&resumed.state().trials), timeless(&full.trials));
    assert_eq!(resumed.state().rng_cursor, full.rng_cursor);
}

#[test]
fn resume_twenty_to_forty_matches_uninterrupted() {
    resume_matches(OptimizerConfig::Random, 1, 20, 40);
    resume_matches(tpe(), 1, 20, 40);
    resume_matches(
        OptimizerConfig::Grid {
            resolution: reference_resolution(),
        },
        1,
        20,
        40,
    );
}

#[test]
fn resume_inside_a_cma_generation() {
    let space = SearchSpace::new(vec![
        ParamSpec::new("k", Domain::LogInteger { lo: 8, hi: 256 }),
        ParamSpec::new("lam", Domain::LogContinuous { lo: 1e-4, hi: 1.0 }),
    ])
    .unwrap();
    struct Fixed;
    impl Evaluator for Fixed {
        fn evaluate(&self, r: &EvalRequest) -> integral::Result<EvalResult> {
            let mut p = r.params.clone();
            p.0.insert("algo".into(), integral::ParamValue::Str("bpr".into()));
            synthetic_eval(&p)
        }
    }
    let mut config = StudyConfig::new(
        synthetic_metrics(),
        space,
        OptimizerConfig::Sepcmaes(SepCmaConfig::default()),
        23,
    );
    config.weight_mode = WeightMode::FixedAfterCalibration { n_calibration: 10 };
    config.seed = 8;
    let mut full = Study::new(config.clone()).unwrap();
    full.run(&Fixed, |_| {}).unwrap();

    let dir = tempdir().unwrap();
    let mut short = config.clone();
    short.budget = 13;
    let mut study = Study::create(short, dir.path()).unwrap();
    study.run(&Fixed, |_| {}).unwrap();
    let (mut resumed, _) = Study::resume(dir.path(), Some(23)).unwrap();
    resumed.run(&Fixed, |_| {}).unwrap();
    assert_eq!(
        timeless(&resumed.state().trials),
        timeless(&full.state().trials)
    );
}

#[test]
fn preview_does_not_advance_the_study() {
    let mut study = Study::new(synthetic(tpe(), 10, 3)).unwrap();
    run(&mut study);
    let before = study.state().clone();
    let a = study.preview(5).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(study.preview(5).unwrap(), a);
    assert_eq!(study.state(), &before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loaded_study_asks_like_the_original(seed in 0u64..1000, n in 1usize..14, kind in 0usize..3) {
        let optimizer = match kind {
            0 => OptimizerConfig::Random,
            1 => tpe(),
            _ => OptimizerConfig::Grid { resolution: reference_resolution() },
        };
        let dir = tempdir().unwrap();
        let mut config = synthetic(optimizer, n, seed);
        config.weight_mode = WeightMode::FixedAfterCalibration { n_calibration: n.min(6) };
        let mut original = Study::create(config, dir.path()).unwrap();
        run(&mut original);
        let (resumed, _) = Study::resume(dir.path(), None).unwrap();
        prop_assert_eq!(resumed.state(), original.state());
        prop_assert_eq!(resumed.preview(10).unwrap(), original.preview(10).unwrap());
    }
}
