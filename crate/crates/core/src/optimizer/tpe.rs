//! Tree-structured Parzen Estimator over a flat search space.
//!
//! Finished trials are split into a "good" and a "bad" set by objective.
//! Each dimension gets an independent density per set: numeric dimensions
//! use a mixture of Gaussians truncated to the unit interval (in unit-cube
//! coordinates) plus a uniform prior component, categorical dimensions use
//! smoothed frequencies. Candidates are drawn from the good densities and the
//! one maximizing `l(x) / g(x)` is proposed.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{self, Domain, ParamValue, ParamVector, SearchSpace};
use crate::trial::Trial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    /// Fraction of trials treated as good.
    pub gamma: f64,
    /// Trials drawn uniformly before the model is used.
    pub n_startup: usize,
    pub n_candidates: usize,
    /// Weight of the prior component in every estimator.
    pub prior_weight: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
            prior_weight: 1.0,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "tpe gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if self.n_candidates == 0 || self.n_startup == 0 {
            return Err(Error::Config(
                "tpe n_candidates and n_startup must be positive".into(),
            ));
        }
        if !(self.prior_weight.is_finite() && self.prior_weight > 0.0) {
            return Err(Error::Config("tpe prior_weight must be positive".into()));
        }
        Ok(())
    }
}

/// Good/bad partition of the history.
#[derive(Debug, Clone)]
pub struct TpeSplit<'a> {
    pub good: Vec<&'a Trial>,
    pub bad: Vec<&'a Trial>,
}

/// Number of good trials out of `n`: `max(1, ceil(gamma * n))`.
pub(crate) fn n_good(n: usize, gamma: f64) -> usize {
    // the epsilon keeps products like 0.3 * 10 = 3.0000000000000004 at 3
    (((gamma * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Sorts by objective (descending, ties to the lower trial id) and takes the
/// top `max(1, ceil(gamma * n))` as good.
pub fn tpe_split(history: &[Trial], gamma: f64) -> Result<TpeSplit<'_>> {
    if history.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "tpe split needs 2 trials, got {}",
            history.len()
        )));
    }
    let mut sorted: Vec<&Trial> = history.iter().collect();
    sorted.sort_by(|a, b| b.objective.total_cmp(&a.objective).then(a.id.cmp(&b.id)));
    let bad = sorted.split_off(n_good(history.len(), gamma));
    Ok(TpeSplit { good: sorted, bad })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / SQRT_2))
}

/// Truncated-Gaussian mixture on `[0, 1]` with a uniform prior component.
#[derive(Debug, Clone)]
struct ParzenEstimator {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    /// Probability mass of each component inside `[0, 1]`.
    masses: Vec<f64>,
    prior_weight: f64,
}

impl ParzenEstimator {
    fn new(mut observations: Vec<f64>, prior_weight: f64) -> Self {
        observations.sort_by(f64::total_cmp);
        let n = observations.len();
        let min_bw = 1.0 / n.clamp(1, 100) as f64;
        let sigmas: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i == 0 {
                    observations[0]
                } else {
                    observations[i] - observations[i - 1]
                };
                let right = if i + 1 == n {
                    1.0 - observations[i]
                } else {
                    observations[i + 1] - observations[i]
                };
                left.max(right).clamp(min_bw, 1.0)
            })
            .collect();
        let masses = observations
            .iter()
            .zip(&sigmas)
            .map(|(&mu, &s)| normal_cdf((1.0 - mu) / s) - normal_cdf(-mu / s))
            .collect();
        Self {
            mus: observations,
            sigmas,
            masses,
            prior_weight,
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let kernels: f64 = self
            .mus
            .iter()
            .zip(&self.sigmas)
            .zip(&self.masses)
            .map(|((&mu, &s), &mass)| {
                let z = (x - mu) / s;
                (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt() * mass)
            })
            .sum();
        // the prior is the uniform density on [0, 1]
        ((kernels + self.prior_weight) / (self.mus.len() as f64 + self.prior_weight)).ln()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = self.mus.len() as f64 + self.prior_weight;
        let pick = rng.random::<f64>() * total;
        let k = pick.floor() as usize;
        if k >= self.mus.len() {
            return rng.random::<f64>();
        }
        let (mu, s) = (self.mus[k], self.sigmas[k]);
        let mut x = mu;
        for _ in 0..100 {
            let z: f64 = rng.sample(StandardNormal);
            x = mu + s * z;
            if (0.0..=1.0).contains(&x) {
                return x;
            }
        }
        x.clamp(0.0, 1.0)
    }
}

/// Smoothed categorical frequencies: `(count + prior) / (n + prior * K)`.
#[derive(Debug, Clone)]
struct CategoricalEstimator {
    probs: Vec<f64>,
}

impl CategoricalEstimator {
    fn new(indices: &[usize], n_choices: usize, prior_weight: f64) -> Self {
        let mut counts = vec![0.0; n_choices];
        for &i in indices {
            counts[i] += 1.0;
        }
        let denom = indices.len() as f64 + prior_weight * n_choices as f64;
        Self {
            probs: counts
                .into_iter()
                .map(|c| (c + prior_weight) / denom)
                .collect(),
        }
    }

    fn log_pmf(&self, i: usize) -> f64 {
        self.probs[i].ln()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>();
        for (i, &p) in self.probs.iter().enumerate() {
            if u < p {
                return i;
            }
            u -= p;
        }
        self.probs.len() - 1
    }
}

enum DimModel {
    Numeric {
        good: ParzenEstimator,
        bad: ParzenEstimator,
    },
    Categorical {
        good: CategoricalEstimator,
        bad: CategoricalEstimator,
    },
}

#[derive(Clone, Copy)]
enum Coord {
    Unit(f64),
    Choice(usize),
}

impl DimModel {
    fn build(
        spec: &space::ParamSpec,
        good: &[&Trial],
        bad: &[&Trial],
        prior_weight: f64,
    ) -> Result<Self> {
        let value = |t: &Trial| {
            t.params.get(&spec.name).cloned().ok_or_else(|| {
                Error::InvalidValue(format!("trial {} lacks parameter `{}`", t.id, spec.name))
            })
        };
        match &spec.domain {
            Domain::Categorical { choices } => {
                let index = |t: &&Trial| -> Result<usize> {
                    let v = value(t)?;
                    v.as_str()
                        .and_then(|s| choices.iter().position(|c| c == s))
                        .ok_or_else(|| {
                            Error::InvalidValue(format!("trial {} has unknown choice {v}", t.id))
                        })
                };
                let g = good.iter().map(index).collect::<Result<Vec<_>>>()?;
                let b = bad.iter().map(index).collect::<Result<Vec<_>>>()?;
                Ok(DimModel::Categorical {
                    good: CategoricalEstimator::new(&g, choices.len(), prior_weight),
                    bad: CategoricalEstimator::new(&b, choices.len(), prior_weight),
                })
            }
            _ => {
                let unit = |t: &&Trial| space::encode(spec, &value(t)?);
                let g = good.iter().map(unit).collect::<Result<Vec<_>>>()?;
                let b = bad.iter().map(unit).collect::<Result<Vec<_>>>()?;
                Ok(DimModel::Numeric {
                    good: ParzenEstimator::new(g, prior_weight),
                    bad: ParzenEstimator::new(b, prior_weight),
                })
            }
        }
    }

    fn sample_good<R: Rng + ?Sized>(&self, rng: &mut R) -> Coord {
        match self {
            DimModel::Numeric { good, .. } => Coord::Unit(good.sample(rng)),
            DimModel::Categorical { good, .. } => Coord::Choice(good.sample(rng)),
        }
    }

    fn log_ratio(&self, c: Coord) -> f64 {
        match (self, c) {
            (DimModel::Numeric { good, bad }, Coord::Unit(x)) => good.log_pdf(x) - bad.log_pdf(x),
            (DimModel::Categorical { good, bad }, Coord::Choice(i)) => {
                good.log_pmf(i) - bad.log_pmf(i)
            }
            _ => unreachable!(),
        }
    }
}

/// Proposes one configuration from the good/bad density ratio.
pub fn tpe_suggest<R: Rng + ?Sized>(
    history: &[Trial],
    space: &SearchSpace,
    config: &TpeConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    let split = tpe_split(history, config.gamma)?;
    let models = space
        .params()
        .iter()
        .map(|p| DimModel::build(p, &split.good, &split.bad, config.prior_weight))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(f64, Vec<Coord>)> = None;
    for _ in 0..config.n_candidates {
        let candidate: Vec<Coord> = models.iter().map(|m| m.sample_good(rng)).collect();
        let score: f64 = models
            .iter()
            .zip(&candidate)
            .map(|(m, &c)| m.log_ratio(c))
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    let (_, coords) = best.expect("n_candidates is positive");
    Ok(ParamVector(
        space
            .params()
            .iter()
            .zip(coords)
            .map(|(p, c)| {
                let value = match (&p.domain, c) {
                    (Domain::Categorical { choices }, Coord::Choice(i)) => {
                        ParamValue::Str(choices[i].clone())
                    }
                    (domain, Coord::Unit(x)) => space::decode(domain, x),
                    _ => unreachable!(),
                };
                (p.name.clone(), value)
            })
            .collect(),
    ))
}
