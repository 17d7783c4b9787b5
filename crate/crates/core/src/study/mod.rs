//! The optimize loop: ask, evaluate, score, tell, persist.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;

use crate::error::{Error, Result};
use crate::evaluation::{EvalRequest, EvalResult, Evaluator};
use crate::optimizer::{Ask, Optimizer};
use crate::rng::StudyRng;
use crate::scoring::{
    blend_weights, build_matrix, metric_weights, objective_value, score_matrix, MetricSet,
    WeightVector,
};
use crate::space::ParamVector;
use crate::trial::Trial;

pub mod config;
pub mod store;

pub use config::{EvaluatorConfig, NormalizationMode, StudyConfig, WeightMode, SCHEMA_VERSION};
pub use store::{read_study_dir, BatchInfo, StoredStudy, StudyStore, TrialRecord};

/// Everything that defines where a study stands.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyState {
    pub config: StudyConfig,
    /// Trials in id order; ids are `0..n` without gaps.
    pub trials: Vec<Trial>,
    /// Entropy weights fixed at the end of calibration.
    pub frozen_weights: Option<WeightVector>,
    pub rng_cursor: u128,
}

impl StudyState {
    /// Completed trial with the highest objective; ties go to the lower id.
    pub fn best(&self) -> Option<&Trial> {
        best_trial(&self.trials)
    }
}

pub fn best_trial(trials: &[Trial]) -> Option<&Trial> {
    trials
        .iter()
        .filter(|t| t.is_complete())
        .fold(None, |best: Option<&Trial>, t| match best {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
}

/// Metric weights a study uses for `trials`, and whether they are frozen.
fn study_weights(
    config: &StudyConfig,
    metrics: &MetricSet,
    trials: &[Trial],
) -> Result<(WeightVector, bool)> {
    let source = config.normalization_mode.range_source();
    let expert = metrics.expert_weights();
    let entropy = |rows: &[Trial]| -> Result<WeightVector> {
        let w = if rows.iter().any(Trial::is_complete) {
            metric_weights(&build_matrix(rows, metrics, source)?, metrics)?
        } else {
            WeightVector::equal(metrics)
        };
        blend_weights(&w, &expert, config.expert_alpha, metrics)
    };
    match config.weight_mode {
        WeightMode::FixedAfterCalibration { n_calibration } if trials.len() >= n_calibration => {
            Ok((entropy(&trials[..n_calibration])?, true))
        }
        WeightMode::FixedAfterCalibration { .. } => Ok((WeightVector::equal(metrics), false)),
        WeightMode::Adaptive => Ok((entropy(trials)?, false)),
    }
}

fn rescore(
    config: &StudyConfig,
    metrics: &MetricSet,
    trials: &mut [Trial],
) -> Result<Option<WeightVector>> {
    let (weights, frozen) = study_weights(config, metrics, trials)?;
    for t in trials.iter_mut() {
        t.breakdown = None;
        t.objective = 0.0;
    }
    if trials.iter().any(Trial::is_complete) {
        let matrix = build_matrix(trials, metrics, config.normalization_mode.range_source())?;
        let breakdowns = score_matrix(&matrix, &weights, metrics, &config.strategy)?;
        for (id, b) in matrix.rows.iter().zip(breakdowns) {
            let t = &mut trials[*id as usize];
            t.objective = objective_value(&b, &config.strategy);
            t.breakdown = Some(b);
        }
    }
    Ok(frozen.then_some(weights))
}

/// Recomputes every trial's breakdown and objective from the current history.
///
/// Failed trials get objective 0 and no breakdown. `frozen_weights` is set
/// once calibration is complete in fixed weight mode.
pub fn rescore_history(state: &mut StudyState) -> Result<()> {
    if !state.trials.iter().any(Trial::is_complete) {
        return Err(Error::EmptyStudy);
    }
    let metrics = state.config.validate()?;
    state.frozen_weights = rescore(&state.config, &metrics, &mut state.trials)?;
    Ok(())
}

#[derive(Debug, Clone)]
struct Batch {
    info: BatchInfo,
    params: Vec<ParamVector>,
    /// Suggestions already turned into trials.
    done: usize,
}

/// Progress notification after each finished trial.
pub struct Progress<'a> {
    pub trial: &'a Trial,
    pub best: Option<&'a Trial>,
    pub budget: usize,
}

/// A study in progress, optionally backed by a study directory.
pub struct Study {
    state: StudyState,
    metrics: MetricSet,
    optimizer: Optimizer,
    rng: StudyRng,
    infos: Vec<BatchInfo>,
    batch: Option<Batch>,
    batches: u64,
    exhausted: bool,
    store: Option<StudyStore>,
}

impl std::fmt::Debug for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Study")
            .field("state", &self.state)
            .field("batches", &self.batches)
            .finish_non_exhaustive()
    }
}

impl Study {
    /// An in-memory study.
    pub fn new(config: StudyConfig) -> Result<Self> {
        let metrics = config.validate()?;
        let optimizer = config.optimizer.build(&config.space).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        let rng = StudyRng::new(config.seed);
        Ok(Self {
            state: StudyState {
                rng_cursor: rng.cursor(),
                config,
                trials: Vec::new(),
                frozen_weights: None,
            },
            metrics,
            optimizer,
            rng,
            infos: Vec::new(),
            batch: None,
            batches: 0,
            exhausted: false,
            store: None,
        })
    }

    /// A new study persisted to `dir`.
    pub fn create(config: StudyConfig, dir: &Path) -> Result<Self> {
        let mut study = Self::new(config)?;
        study.store = Some(StudyStore::create(dir, &study.state.config)?);
        Ok(study)
    }

    /// Reopens a persisted study and reconstructs its optimizer and random
    /// stream by replaying the recorded asks.
    ///
    /// `budget` replaces the stored budget when given. Repairs made while
    /// loading are returned as warnings and written to the study log.
    pub fn resume(dir: &Path, budget: Option<usize>) -> Result<(Self, Vec<String>)> {
        let (mut store, stored) = StudyStore::open(dir)?;
        let mut config = stored.config;
        if let Some(b) = budget {
            config.budget = b;
        }
        let mut study = Self::new(config)?;
        study.replay(&stored.records)?;
        if budget.is_some() {
            store.save_config(&study.state.config)?;
        }
        for w in &stored.warnings {
            log::warn!("{w}");
            store.log(&format!("warning: {w}"))?;
        }
        store.log(&format!("resumed with {} trials", study.state.trials.len()))?;
        study.store = Some(store);
        Ok((study, stored.warnings))
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn into_state(self) -> StudyState {
        self.state
    }

    pub fn trials(&self) -> &[Trial] {
        &self.state.trials
    }

    pub fn metrics(&self) -> &MetricSet {
        &self.metrics
    }

    /// Batch positions of every trial, parallel to [`Study::trials`].
    pub fn batch_infos(&self) -> &[BatchInfo] {
        &self.infos
    }

    fn remaining(&self) -> usize {
        self.state
            .config
            .budget
            .saturating_sub(self.state.trials.len())
    }

    /// Tells a finished batch and asks for the next one when needed.
    /// Returns false when the optimizer is exhausted.
    fn prepare_batch(&mut self, ask_size: usize) -> Result<bool> {
        if let Some(b) = &self.batch {
            if b.done < b.params.len() {
                return Ok(true);
            }
            let first = self.state.trials.len() - b.done;
            let objectives: Vec<f64> = self.state.trials[first..]
                .iter()
                .map(|t| t.objective)
                .collect();
            self.optimizer.tell(&objectives)?;
            self.batch = None;
        }
        if self.exhausted {
            return Ok(false);
        }
        let ask = self.optimizer.ask(
            &self.state.trials,
            &self.state.config.space,
            &mut self.rng,
            ask_size,
        )?;
        self.state.rng_cursor = self.rng.cursor();
        match ask {
            Ask::Batch(params) if !params.is_empty() => {
                let info = BatchInfo {
                    batch: self.batches,
                    ask_size,
                    rng_cursor: self.rng.cursor(),
                };
                self.batches += 1;
                self.batch = Some(Batch {
                    info,
                    params,
                    done: 0,
                });
                Ok(true)
            }
            _ => {
                self.exhausted = true;
                Ok(false)
            }
        }
    }

    fn next_ask_size(&self) -> usize {
        self.state.config.parallelism.min(self.remaining()).max(1)
    }

    /// Suggestions of the current batch that have not been evaluated yet.
    fn undispatched(&self, limit: usize) -> Vec<ParamVector> {
        match &self.batch {
            Some(b) => b.params[b.done..].iter().take(limit).cloned().collect(),
            None => Vec::new(),
        }
    }

    /// Adds a finished trial, rescores the history and persists it.
    fn record(&mut self, trial: Trial) -> Result<()> {
        let batch = self.batch.as_mut().expect("trial outside a batch");
        batch.done += 1;
        let info = batch.info;
        self.state.trials.push(trial);
        self.infos.push(info);
        let was_frozen = self.state.frozen_weights.is_some();
        self.state.frozen_weights =
            rescore(&self.state.config, &self.metrics, &mut self.state.trials)?;
        let froze = !was_frozen && self.state.frozen_weights.is_some();
        if let Some(store) = self.store.as_mut() {
            let last = self.state.trials.last().expect("just pushed");
            if froze {
                // earlier lines still carry calibration-time scores
                let records: Vec<TrialRecord> = self
                    .state
                    .trials
                    .iter()
                    .zip(&self.infos)
                    .map(|(t, i)| TrialRecord::new(t, *i))
                    .collect();
                store.rewrite(&records)?;
            } else {
                store.append(&TrialRecord::new(last, info))?;
            }
        }
        if froze {
            let w = self.state.frozen_weights.as_ref().expect("frozen");
            let text = w
                .weights
                .iter()
                .map(|(k, v)| format!("{k}={v:.6}"))
                .collect::<Vec<_>>()
                .join(" ");
            self.event(&format!(
                "weights frozen after {} trials: {text}",
                self.state.trials.len()
            ))?;
        }
        Ok(())
    }

    fn event(&mut self, line: &str) -> Result<()> {
        log::info!("{line}");
        if let Some(store) = self.store.as_mut() {
            store.log(line)?;
        }
        Ok(())
    }

    fn replay(&mut self, records: &[TrialRecord]) -> Result<()> {
        let mut i = 0;
        while i < records.len() {
            let rec = &records[i];
            if !self.prepare_batch(rec.ask_size)? {
                return Err(Error::ReplayMismatch(format!(
                    "optimizer exhausted before trial {}",
                    rec.trial_id
                )));
            }
            let info = self.batch.as_ref().expect("prepared").info;
            if info != rec.info() {
                return Err(Error::ReplayMismatch(format!(
                    "trial {}: batch {:?} recorded, {:?} replayed",
                    rec.trial_id,
                    rec.info(),
                    info
                )));
            }
            while i < records.len() && records[i].batch == info.batch {
                let rec = &records[i];
                let expected = self.undispatched(1).pop();
                if expected.as_ref() != Some(&rec.params) {
                    return Err(Error::ReplayMismatch(format!(
                        "trial {}: recorded {}, replayed {}",
                        rec.trial_id,
                        rec.params,
                        expected
                            .map(|p| p.to_string())
                            .unwrap_or_else(|| "nothing".into())
                    )));
                }
                let mut trial = rec.to_trial();
                trial.breakdown = None;
                trial.objective = 0.0;
                self.record_replayed(trial)?;
                i += 1;
            }
        }
        Ok(())
    }

    fn record_replayed(&mut self, trial: Trial) -> Result<()> {
        let store = self.store.take();
        let out = self.record(trial);
        self.store = store;
        out
    }

    fn to_trial(&self, id: u64, params: ParamVector, result: EvalResult) -> Trial {
        let mut trial = if result.is_ok() {
            let bad = self
                .metrics
                .names()
                .find(|n| !result.metrics.get(*n).is_some_and(|v| v.is_finite()))
                .map(str::to_owned);
            match bad {
                None => {
                    let metrics: BTreeMap<String, f64> = self
                        .metrics
                        .names()
                        .map(|n| (n.to_owned(), result.metrics[n]))
                        .collect();
                    let mut t = Trial::completed(id, params, metrics);
                    t.message = result.message;
                    t
                }
                Some(name) => {
                    Trial::failed(id, params, format!("missing or non-finite metric `{name}`"))
                }
            }
        } else {
            Trial::failed(
                id,
                params,
                result.message.unwrap_or_else(|| "evaluation failed".into()),
            )
        };
        trial.duration = result.duration;
        trial
    }

    /// Runs until the budget is spent or the optimizer is exhausted.
    ///
    /// `progress` is called after every trial. An unusable evaluator aborts
    /// the run; trials finished before it stay recorded.
    pub fn run(
        &mut self,
        evaluator: &dyn Evaluator,
        mut progress: impl FnMut(Progress<'_>),
    ) -> Result<()> {
        let parallelism = self.state.config.parallelism;
        while self.remaining() > 0 {
            if !self.prepare_batch(self.next_ask_size())? {
                self.event(&format!(
                    "search space exhausted after {} trials",
                    self.state.trials.len()
                ))?;
                break;
            }
            let chunk = self.undispatched(parallelism.min(self.remaining()));
            let first_id = self.state.trials.len() as u64;
            let requests: Vec<EvalRequest> = chunk
                .into_iter()
                .enumerate()
                .map(|(k, params)| EvalRequest {
                    trial_id: first_id + k as u64,
                    params,
                })
                .collect();
            let results = evaluate_all(evaluator, &requests);
            for (request, result) in requests.into_iter().zip(results) {
                let result = match result {
                    Ok(r) => r,
                    Err(e @ Error::EvaluatorUnavailable(_)) => {
                        self.event(&format!("trial {}: {e}", request.trial_id))?;
                        return Err(e);
                    }
                    Err(e) => EvalResult::failed(e.to_string()),
                };
                if !result.stderr.trim().is_empty() {
                    let text = format!(
                        "trial {} stderr:\n{}",
                        request.trial_id,
                        result.stderr.trim_end()
                    );
                    if let Some(store) = self.store.as_mut() {
                        store.log(&text)?;
                    }
                }
                let trial = self.to_trial(request.trial_id, request.params, result);
                if let Some(msg) = trial.message.as_ref().filter(|_| !trial.is_complete()) {
                    self.event(&format!("trial {} failed: {msg}", trial.id))?;
                }
                self.record(trial)?;
                let trials = &self.state.trials;
                progress(Progress {
                    trial: trials.last().expect("recorded"),
                    best: best_trial(trials),
                    budget: self.state.config.budget,
                });
            }
        }
        Ok(())
    }

    /// Suggestions the study would evaluate next, without changing it.
    ///
    /// Assumes every suggestion fails, so the preview does not depend on an
    /// evaluator.
    pub fn preview(&self, n: usize) -> Result<Vec<ParamVector>> {
        let mut sim = Study {
            state: self.state.clone(),
            metrics: self.metrics.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
            infos: self.infos.clone(),
            batch: self.batch.clone(),
            batches: self.batches,
            exhausted: self.exhausted,
            store: None,
        };
        sim.state.config.budget = sim.state.trials.len() + n;
        let mut out = Vec::new();
        while out.len() < n {
            if !sim.prepare_batch(sim.next_ask_size())? {
                break;
            }
            let params = sim.undispatched(1).pop().expect("prepared");
            out.push(params.clone());
            let id = sim.state.trials.len() as u64;
            sim.record(Trial::failed(id, params, "preview".into()))?;
        }
        Ok(out)
    }
}

fn evaluate_all(evaluator: &dyn Evaluator, requests: &[EvalRequest]) -> Vec<Result<EvalResult>> {
    if requests.len() == 1 {
        return vec![evaluator.evaluate(&requests[0])];
    }
    thread::scope(|s| {
        let handles: Vec<_> = requests
            .iter()
            .map(|r| s.spawn(move || evaluator.evaluate(r)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Ok(EvalResult::failed("evaluator panicked")))
            })
            .collect()
    })
}

/// Runs a fresh in-memory study to completion.
pub fn run_study(config: StudyConfig, evaluator: &dyn Evaluator) -> Result<StudyState> {
    let mut study = Study::new(config)?;
    study.run(evaluator, |_| {})?;
    Ok(study.into_state())
}

/// Loaded study plus any repairs made while reading it.
#[derive(Debug, Clone)]
pub struct LoadedStudy {
    pub state: StudyState,
    pub warnings: Vec<String>,
}

/// Reads a study directory without modifying it and rescores the history.
///
/// A torn last line is skipped and reported as a warning.
pub fn load_study(dir: &Path) -> Result<LoadedStudy> {
    let stored = read_study_dir(dir)?;
    let mut study = Study::new(stored.config)?;
    study.replay(&stored.records)?;
    Ok(LoadedStudy {
        state: study.into_state(),
        warnings: stored.warnings,
    })
}
