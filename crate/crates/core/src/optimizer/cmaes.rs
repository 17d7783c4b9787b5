//! Separable CMA-ES: the covariance matrix is restricted to its diagonal,
//! which makes sampling and the update linear in the dimension.
//!
//! The search runs in the unit cube of the (non-categorical) search space
//! and maximizes the objective.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ParamVector, SearchSpace};

/// Attempts at drawing an in-cube sample before clamping.
const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SepCmaConfig {
    /// Population size; `4 + floor(3 ln d)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<usize>,
    /// Initial step size in unit-cube coordinates.
    pub sigma0: f64,
    /// Initial mean in unit-cube coordinates; the cube center when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_mean: Option<Vec<f64>>,
}

impl Default for SepCmaConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            sigma0: 0.3,
            initial_mean: None,
        }
    }
}

impl SepCmaConfig {
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if let Some(p) = space.params().iter().find(|p| p.domain.is_categorical()) {
            return Err(Error::UnsupportedDomain(p.name.clone()));
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::Config(format!(
                "sigma0 {} must be positive",
                self.sigma0
            )));
        }
        if matches!(self.lambda, Some(l) if l < 2) {
            return Err(Error::Config("sep-CMA-ES lambda must be at least 2".into()));
        }
        if let Some(m) = &self.initial_mean {
            if m.len() != space.dim() || m.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Config(
                    "initial_mean must be a point of the unit cube".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Strategy constants derived from the dimension and population size.
#[derive(Debug, Clone, PartialEq)]
pub struct SepCmaParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_cov: f64,
    pub mu_cov: f64,
    /// Expected norm of a standard normal vector.
    pub chi_n: f64,
}

impl SepCmaParams {
    pub fn default_lambda(dim: usize) -> usize {
        4 + (3.0 * (dim as f64).ln()).floor() as usize
    }

    pub fn new(dim: usize, lambda: usize) -> Self {
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = 4.0 / (n + 4.0);
        let mu_cov = mu_eff;
        let c_cov_full = (1.0 / mu_cov) * 2.0 / (n + 2f64.sqrt()).powi(2)
            + (1.0 - 1.0 / mu_cov) * ((2.0 * mu_eff - 1.0) / ((n + 2.0).powi(2) + mu_eff)).min(1.0);
        // the diagonal-only model can afford a learning rate (n + 2) / 3 times larger
        let c_cov = ((n + 2.0) / 3.0 * c_cov_full).min(1.0);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Self {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_cov,
            mu_cov,
            chi_n,
        }
    }
}

/// Mutable search distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepCmaState {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub diag_c: Vec<f64>,
    pub p_sigma: Vec<f64>,
    pub p_c: Vec<f64>,
    pub generation: u64,
}

impl SepCmaState {
    pub fn is_valid(&self) -> bool {
        self.sigma.is_finite()
            && self.sigma > 0.0
            && self.diag_c.iter().all(|c| c.is_finite() && *c > 0.0)
            && self
                .mean
                .iter()
                .chain(&self.p_sigma)
                .chain(&self.p_c)
                .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct SepCmaEs {
    params: SepCmaParams,
    state: SepCmaState,
    /// Unit-cube samples of the outstanding generation.
    pending: Vec<Vec<f64>>,
}

impl SepCmaEs {
    pub fn new(config: &SepCmaConfig, space: &SearchSpace) -> Result<Self> {
        config.validate(space)?;
        let dim = space.dim();
        let lambda = config
            .lambda
            .unwrap_or_else(|| SepCmaParams::default_lambda(dim));
        Ok(Self::with_state(
            SepCmaParams::new(dim, lambda),
            SepCmaState {
                mean: config
                    .initial_mean
                    .clone()
                    .unwrap_or_else(|| vec![0.5; dim]),
                sigma: config.sigma0,
                diag_c: vec![1.0; dim],
                p_sigma: vec![0.0; dim],
                p_c: vec![0.0; dim],
                generation: 0,
            },
        ))
    }

    pub fn with_state(params: SepCmaParams, state: SepCmaState) -> Self {
        Self {
            params,
            state,
            pending: Vec::new(),
        }
    }

    pub fn params(&self) -> &SepCmaParams {
        &self.params
    }

    pub fn state(&self) -> &SepCmaState {
        &self.state
    }

    /// Draws λ unit-cube points, resampling out-of-cube draws.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let SepCmaState {
            mean,
            sigma,
            diag_c,
            ..
        } = &self.state;
        let scale: Vec<f64> = diag_c.iter().map(|c| sigma * c.sqrt()).collect();
        let batch: Vec<Vec<f64>> = (0..self.params.lambda)
            .map(|_| {
                let mut x = Vec::new();
                for _ in 0..MAX_RESAMPLES {
                    x = mean
                        .iter()
                        .zip(&scale)
                        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                        return x;
                    }
                }
                x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
            })
            .collect();
        self.pending = batch.clone();
        batch
    }

    pub fn ask<R: Rng + ?Sized>(
        &mut self,
        space: &SearchSpace,
        rng: &mut R,
    ) -> Result<Vec<ParamVector>> {
        self.sample(rng)
            .iter()
            .map(|u| space.from_unit_cube(u))
            .collect()
    }

    /// Updates the distribution from the objectives of the pending generation
    /// (in sample order, larger is better).
    pub fn tell(&mut self, objectives: &[f64]) -> Result<()> {
        if objectives.len() != self.params.lambda || self.pending.len() != self.params.lambda {
            return Err(Error::InvalidValue(format!(
                "sep-CMA-ES expects {} objectives for the outstanding generation, got {}",
                self.params.lambda,
                objectives.len()
            )));
        }
        if objectives.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidValue("non-finite objective".into()));
        }
        let p = &self.params;
        let s = &mut self.state;
        let n = p.dim;

        let mut order: Vec<usize> = (0..p.lambda).collect();
        order.sort_by(|&a, &b| objectives[b].total_cmp(&objectives[a]));
        let elite: Vec<&Vec<f64>> = order[..p.mu].iter().map(|&k| &self.pending[k]).collect();

        let old_mean = s.mean.clone();
        let new_mean: Vec<f64> = (0..n)
            .map(|j| elite.iter().zip(&p.weights).map(|(x, w)| w * x[j]).sum())
            .collect();
        let y_w: Vec<f64> = (0..n)
            .map(|j| (new_mean[j] - old_mean[j]) / s.sigma)
            .collect();

        let ps_coef = (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        for j in 0..n {
            s.p_sigma[j] = (1.0 - p.c_sigma) * s.p_sigma[j] + ps_coef * y_w[j] / s.diag_c[j].sqrt();
        }
        let ps_norm = s.p_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        let decay = 1.0 - (1.0 - p.c_sigma).powf(2.0 * (s.generation + 1) as f64);
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;

        let pc_coef = if h_sigma {
            (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt()
        } else {
            0.0
        };
        for j in 0..n {
            s.p_c[j] = (1.0 - p.c_c) * s.p_c[j] + pc_coef * y_w[j];
        }

        let stall = if h_sigma { 0.0 } else { p.c_c * (2.0 - p.c_c) };
        for j in 0..n {
            let rank_mu: f64 = elite
                .iter()
                .zip(&p.weights)
                .map(|(x, w)| {
                    let y = (x[j] - old_mean[j]) / s.sigma;
                    w * y * y
                })
                .sum();
            s.diag_c[j] = (1.0 - p.c_cov) * s.diag_c[j]
                + p.c_cov / p.mu_cov * (s.p_c[j] * s.p_c[j] + stall * s.diag_c[j])
                + p.c_cov * (1.0 - 1.0 / p.mu_cov) * rank_mu;
        }

        s.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        s.mean = new_mean;
        s.generation += 1;
        self.pending.clear();
        Ok(())
    }
}
