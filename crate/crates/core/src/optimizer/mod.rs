//! Ask/tell search engines. All of them maximize the scalar objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StudyRng;
use crate::space::{ParamVector, SearchSpace};
use crate::trial::Trial;

mod cmaes;
mod tpe;

pub use cmaes::{SepCmaConfig, SepCmaEs, SepCmaParams, SepCmaState};
pub use tpe::{tpe_split, tpe_suggest, TpeConfig, TpeSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Grid {
        /// Points per non-categorical dimension.
        resolution: BTreeMap<String, usize>,
    },
    Random,
    Tpe(TpeConfig),
    Sepcmaes(SepCmaConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Tpe(TpeConfig::default())
    }
}

impl OptimizerConfig {
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        match self {
            OptimizerConfig::Grid { resolution } => space.grid_len(resolution).map(|_| ()),
            OptimizerConfig::Random => Ok(()),
            OptimizerConfig::Tpe(c) => c.validate(),
            OptimizerConfig::Sepcmaes(c) => c.validate(space),
        }
    }

    pub fn build(&self, space: &SearchSpace) -> Result<Optimizer> {
        self.validate(space)?;
        Ok(match self {
            OptimizerConfig::Grid { resolution } => {
                Optimizer::Grid(GridSearch::new(space.grid_points(resolution)?))
            }
            OptimizerConfig::Random => Optimizer::Random,
            OptimizerConfig::Tpe(c) => Optimizer::Tpe(c.clone()),
            OptimizerConfig::Sepcmaes(c) => Optimizer::SepCmaes(SepCmaEs::new(c, space)?),
        })
    }
}

/// Outcome of an ask.
#[derive(Debug, Clone, PartialEq)]
pub enum Ask {
    Batch(Vec<ParamVector>),
    /// Nothing left to propose (grid fully enumerated).
    Exhausted,
}

/// Walks a precomputed grid in enumeration order.
#[derive(Debug, Clone)]
pub struct GridSearch {
    points: Vec<ParamVector>,
    cursor: usize,
}

impl GridSearch {
    pub fn new(points: Vec<ParamVector>) -> Self {
        Self { points, cursor: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.points.len() - self.cursor
    }

    fn next_batch(&mut self, n: usize) -> Ask {
        if self.cursor == self.points.len() {
            return Ask::Exhausted;
        }
        let end = (self.cursor + n.max(1)).min(self.points.len());
        let batch = self.points[self.cursor..end].to_vec();
        self.cursor = end;
        Ask::Batch(batch)
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Grid(GridSearch),
    Random,
    Tpe(TpeConfig),
    SepCmaes(SepCmaEs),
}

impl Optimizer {
    /// Proposes the next batch.
    ///
    /// `n` is the preferred batch size; sep-CMA-ES always returns a full
    /// generation of λ points. `history` holds every finished trial with its
    /// current objective (failed trials count as 0).
    pub fn ask(
        &mut self,
        history: &[Trial],
        space: &SearchSpace,
        rng: &mut StudyRng,
        n: usize,
    ) -> Result<Ask> {
        let n = n.max(1);
        match self {
            Optimizer::Grid(grid) => Ok(grid.next_batch(n)),
            Optimizer::Random => Ok(Ask::Batch(
                (0..n).map(|_| space.sample_uniform(rng)).collect(),
            )),
            Optimizer::Tpe(config) => {
                let batch = (0..n)
                    .map(|_| {
                        if history.len() < config.n_startup.max(2) {
                            Ok(space.sample_uniform(rng))
                        } else {
                            tpe_suggest(history, space, config, rng)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Ask::Batch(batch))
            }
            Optimizer::SepCmaes(cma) => cma.ask(space, rng).map(Ask::Batch),
        }
    }

    /// Reports objectives for the most recent batch, in ask order.
    ///
    /// Only sep-CMA-ES keeps state between generations; the others read the
    /// history directly at the next ask.
    pub fn tell(&mut self, objectives: &[f64]) -> Result<()> {
        if let Some(bad) = objectives.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite objective {bad}")));
        }
        match self {
            Optimizer::SepCmaes(cma) => cma.tell(objectives),
            _ => Ok(()),
        }
    }

    /// Whether `tell` must wait for the whole batch returned by `ask`.
    pub fn needs_full_batch(&self) -> bool {
        matches!(self, Optimizer::SepCmaes(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Domain, ParamSpec};

    fn six_point_space() -> (SearchSpace, BTreeMap<String, usize>) {
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
        (space, BTreeMap::from([("x".to_string(), 3)]))
    }

    #[test]
    fn grid_asks_follow_enumeration_then_exhaust() {
        let (space, resolution) = six_point_space();
        let config = OptimizerConfig::Grid {
            resolution: resolution.clone(),
        };
        let mut opt = config.build(&space).unwrap();
        let mut rng = StudyRng::new(0);
        let mut seen = Vec::new();
        for _ in 0..6 {
            match opt.ask(&[], &space, &mut rng, 1).unwrap() {
                Ask::Batch(b) => seen.extend(b),
                Ask::Exhausted => panic!("exhausted early"),
            }
        }
        assert_eq!(seen, space.grid_points(&resolution).unwrap());
        assert_eq!(opt.ask(&[], &space, &mut rng, 1).unwrap(), Ask::Exhausted);
        assert_eq!(rng.cursor(), 0, "grid search must not consume randomness");
    }

    #[test]
    fn grid_batches_truncate_at_end() {
        let (space, resolution) = six_point_space();
        let mut opt = OptimizerConfig::Grid { resolution }.build(&space).unwrap();
        let mut rng = StudyRng::new(0);
        let sizes: Vec<usize> = (0..2)
            .map(|_| match opt.ask(&[], &space, &mut rng, 4).unwrap() {
                Ask::Batch(b) => b.len(),
                Ask::Exhausted => 0,
            })
            .collect();
        assert_eq!(sizes, vec![4, 2]);
    }

    #[test]
    fn tpe_startup_matches_random() {
        let (space, _) = six_point_space();
        let history: Vec<Trial> = (0..3)
            .map(|i| {
                let mut t = Trial::completed(
                    i,
                    space.sample_uniform(&mut StudyRng::new(i)),
                    BTreeMap::new(),
                );
                t.objective = i as f64;
                t
            })
            .collect();
        let mut tpe = OptimizerConfig::Tpe(TpeConfig::default())
            .build(&space)
            .unwrap();
        let mut random = OptimizerConfig::Random.build(&space).unwrap();
        let (mut r1, mut r2) = (StudyRng::new(9), StudyRng::new(9));
        assert_eq!(
            tpe.ask(&history, &space, &mut r1, 3).unwrap(),
            random.ask(&history, &space, &mut r2, 3).unwrap()
        );
        assert_eq!(r1, r2);
    }

    #[test]
    fn config_serde_shapes() {
        let c: OptimizerConfig = serde_json::from_str(r#"{"kind":"tpe","gamma":0.3}"#).unwrap();
        assert_eq!(
            c,
            OptimizerConfig::Tpe(TpeConfig {
                gamma: 0.3,
                ..TpeConfig::default()
            })
        );
        let c: OptimizerConfig = serde_json::from_str(r#"{"kind":"sepcmaes"}"#).unwrap();
        assert_eq!(c, OptimizerConfig::Sepcmaes(SepCmaConfig::default()));
        let c: OptimizerConfig = serde_json::from_str(r#"{"kind":"random"}"#).unwrap();
        assert_eq!(c, OptimizerConfig::Random);
    }

    #[test]
    fn tell_rejects_non_finite() {
        let mut opt = Optimizer::Random;
        assert!(matches!(opt.tell(&[f64::NAN]), Err(Error::InvalidValue(_))));
    }
}
