//! Hyperparameter domains, grid enumeration, uniform sampling and the
//! unit-cube encoding used by continuous optimizers.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Continuous {
        lo: f64,
        hi: f64,
    },
    /// Sampled and encoded on a log scale; requires `0 < lo < hi`.
    LogContinuous {
        lo: f64,
        hi: f64,
    },
    /// Inclusive bounds.
    Integer {
        lo: i64,
        hi: i64,
    },
    /// Inclusive bounds on a log scale; requires `0 < lo <= hi`.
    LogInteger {
        lo: i64,
        hi: i64,
    },
    Categorical {
        choices: Vec<String>,
    },
}

impl Domain {
    pub fn is_categorical(&self) -> bool {
        matches!(self, Domain::Categorical { .. })
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Domain::Continuous { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Domain::LogContinuous { lo, hi } => {
                lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo < hi
            }
            Domain::Integer { lo, hi } => lo <= hi,
            Domain::LogInteger { lo, hi } => *lo > 0 && lo <= hi,
            Domain::Categorical { choices } => {
                !choices.is_empty()
                    && choices
                        .iter()
                        .enumerate()
                        .all(|(i, c)| !choices[..i].contains(c))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "parameter `{name}` has an invalid domain {self:?}"
            )))
        }
    }

    /// Bounds of the internal coordinate that the unit cube maps onto.
    /// Integer domains are widened by half a unit on each side so every
    /// integer owns an equal-width cell.
    fn coordinate_bounds(&self) -> (f64, f64) {
        match *self {
            Domain::Continuous { lo, hi } => (lo, hi),
            Domain::LogContinuous { lo, hi } => (lo.ln(), hi.ln()),
            Domain::Integer { lo, hi } => (lo as f64 - 0.5, hi as f64 + 0.5),
            Domain::LogInteger { lo, hi } => ((lo as f64 - 0.5).ln(), (hi as f64 + 0.5).ln()),
            Domain::Categorical { .. } => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, domain: Domain) -> Self {
        Self {
            name: name.into(),
            domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(i) => Some(i as f64),
            ParamValue::Float(f) => Some(f),
            ParamValue::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Str(s) => f.write_str(s),
        }
    }
}

/// One configuration: parameter name to value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub BTreeMap<String, ParamValue>);

impl ParamVector {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// An ordered list of parameter domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamSpec>", into = "Vec<ParamSpec>")]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl TryFrom<Vec<ParamSpec>> for SearchSpace {
    type Error = Error;

    fn try_from(params: Vec<ParamSpec>) -> Result<Self> {
        Self::new(params)
    }
}

impl From<SearchSpace> for Vec<ParamSpec> {
    fn from(space: SearchSpace) -> Self {
        space.params
    }
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("search space has no parameters".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate parameter `{}`", p.name)));
            }
            p.domain.validate(&p.name)?;
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn has_categorical(&self) -> bool {
        self.params.iter().any(|p| p.domain.is_categorical())
    }

    /// Checks that `v` assigns an in-domain value to every parameter and nothing else.
    pub fn contains(&self, v: &ParamVector) -> bool {
        v.0.len() == self.params.len()
            && self
                .params
                .iter()
                .all(|p| match (v.get(&p.name), &p.domain) {
                    (
                        Some(ParamValue::Float(x)),
                        Domain::Continuous { lo, hi } | Domain::LogContinuous { lo, hi },
                    ) => x >= lo && x <= hi,
                    (
                        Some(ParamValue::Int(x)),
                        Domain::Integer { lo, hi } | Domain::LogInteger { lo, hi },
                    ) => x >= lo && x <= hi,
                    (Some(ParamValue::Str(s)), Domain::Categorical { choices }) => {
                        choices.contains(s)
                    }
                    _ => false,
                })
    }

    /// Values along one dimension of the grid, ascending (or in choice order).
    fn grid_axis(spec: &ParamSpec, resolution: Option<usize>) -> Result<Vec<ParamValue>> {
        if let Domain::Categorical { choices } = &spec.domain {
            return Ok(choices.iter().cloned().map(ParamValue::Str).collect());
        }
        let r = match resolution {
            Some(r) if r >= 1 => r,
            _ => return Err(Error::InvalidResolution(spec.name.clone())),
        };
        let fractions: Vec<f64> = if r == 1 {
            vec![0.5]
        } else {
            (0..r).map(|i| i as f64 / (r - 1) as f64).collect()
        };
        let mut axis: Vec<ParamValue> = Vec::with_capacity(r);
        for t in fractions {
            let value = match spec.domain {
                Domain::Continuous { lo, hi } => {
                    ParamValue::Float(if t == 1.0 { hi } else { lo + (hi - lo) * t })
                }
                Domain::LogContinuous { lo, hi } => ParamValue::Float(log_interp(lo, hi, t)),
                Domain::Integer { lo, hi } => {
                    ParamValue::Int((lo as f64 + (hi - lo) as f64 * t).round() as i64)
                }
                Domain::LogInteger { lo, hi } => {
                    ParamValue::Int(log_interp(lo as f64, hi as f64, t).round() as i64)
                }
                Domain::Categorical { .. } => unreachable!(),
            };
            if !axis.contains(&value) {
                axis.push(value);
            }
        }
        Ok(axis)
    }

    /// Cartesian product of per-dimension grids, the first declared
    /// dimension varying slowest.
    pub fn grid_points(&self, resolution: &BTreeMap<String, usize>) -> Result<Vec<ParamVector>> {
        let axes = self
            .params
            .iter()
            .map(|p| Self::grid_axis(p, resolution.get(&p.name).copied()))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = axes.iter().map(Vec::len).product();
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            points.push(ParamVector(
                self.params
                    .iter()
                    .zip(&axes)
                    .zip(&idx)
                    .map(|((p, axis), &i)| (p.name.clone(), axis[i].clone()))
                    .collect(),
            ));
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(points)
    }

    /// Number of grid points without materializing them.
    pub fn grid_len(&self, resolution: &BTreeMap<String, usize>) -> Result<usize> {
        self.params
            .iter()
            .map(|p| Self::grid_axis(p, resolution.get(&p.name).copied()).map(|a| a.len()))
            .product()
    }

    /// Draws one configuration uniformly: log domains uniform in log space,
    /// integers uniform over the inclusive range. Consumes exactly one draw
    /// per dimension, in declaration order.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        ParamVector(
            self.params
                .iter()
                .map(|p| {
                    let value = match &p.domain {
                        Domain::Categorical { choices } => {
                            ParamValue::Str(choices[rng.random_range(0..choices.len())].clone())
                        }
                        domain => decode(domain, rng.random::<f64>()),
                    };
                    (p.name.clone(), value)
                })
                .collect(),
        )
    }

    pub fn to_unit_cube(&self, v: &ParamVector) -> Result<Vec<f64>> {
        self.params
            .iter()
            .map(|p| {
                let value = v.get(&p.name).ok_or_else(|| {
                    Error::InvalidValue(format!("missing parameter `{}`", p.name))
                })?;
                encode(p, value)
            })
            .collect()
    }

    /// Decodes a unit-cube point; coordinates are clamped to `[0, 1]` first
    /// and integer dimensions snap to the cell containing the coordinate.
    pub fn from_unit_cube(&self, u: &[f64]) -> Result<ParamVector> {
        if u.len() != self.params.len() {
            return Err(Error::InvalidValue(format!(
                "unit vector has {} coordinates, space has {}",
                u.len(),
                self.params.len()
            )));
        }
        let mut out = BTreeMap::new();
        for (p, &x) in self.params.iter().zip(u) {
            if p.domain.is_categorical() {
                return Err(Error::UnsupportedDomain(p.name.clone()));
            }
            if !x.is_finite() {
                return Err(Error::InvalidValue(format!(
                    "non-finite coordinate for `{}`",
                    p.name
                )));
            }
            out.insert(p.name.clone(), decode(&p.domain, x.clamp(0.0, 1.0)));
        }
        Ok(ParamVector(out))
    }
}

fn log_interp(lo: f64, hi: f64, t: f64) -> f64 {
    if t <= 0.0 {
        lo
    } else if t >= 1.0 {
        hi
    } else {
        (lo.ln() + (hi.ln() - lo.ln()) * t).exp().clamp(lo, hi)
    }
}

/// Maps `u` in `[0, 1]` to a value of a non-categorical domain.
pub(crate) fn decode(domain: &Domain, u: f64) -> ParamValue {
    match *domain {
        Domain::Continuous { lo, hi } => ParamValue::Float((lo + (hi - lo) * u).clamp(lo, hi)),
        Domain::LogContinuous { lo, hi } => ParamValue::Float(log_interp(lo, hi, u)),
        Domain::Integer { lo, hi } => {
            let cells = (hi - lo + 1) as f64;
            let idx = ((u * cells).floor() as i64).clamp(0, hi - lo);
            ParamValue::Int(lo + idx)
        }
        Domain::LogInteger { lo, hi } => {
            let (a, b) = domain.coordinate_bounds();
            let v = (a + (b - a) * u).exp().round() as i64;
            ParamValue::Int(v.clamp(lo, hi))
        }
        Domain::Categorical { .. } => {
            unreachable!("categorical dimensions are not unit-cube encodable")
        }
    }
}

pub(crate) fn encode(spec: &ParamSpec, value: &ParamValue) -> Result<f64> {
    let bad = || {
        Error::InvalidValue(format!(
            "value {value} does not fit parameter `{}`",
            spec.name
        ))
    };
    let (a, b) = spec.domain.coordinate_bounds();
    let coord = match (&spec.domain, value) {
        (Domain::Categorical { .. }, _) => return Err(Error::UnsupportedDomain(spec.name.clone())),
        (Domain::Continuous { .. }, ParamValue::Float(x)) => *x,
        (Domain::LogContinuous { .. }, ParamValue::Float(x)) if *x > 0.0 => x.ln(),
        (Domain::Integer { .. }, ParamValue::Int(i)) => *i as f64,
        (Domain::LogInteger { .. }, ParamValue::Int(i)) if *i > 0 => (*i as f64).ln(),
        _ => return Err(bad()),
    };
    Ok(((coord - a) / (b - a)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(params: Vec<ParamSpec>) -> SearchSpace {
        SearchSpace::new(params).unwrap()
    }

    #[test]
    fn grid_order_and_count() {
        let s = space(vec![
            ParamSpec::new("x", Domain::Continuous { lo: 0.0, hi: 1.0 }),
            ParamSpec::new(
                "c",
                Domain::Categorical {
                    choices: vec!["a".into(), "b".into()],
                },
            ),
        ]);
        let res = BTreeMap::from([("x".to_string(), 3)]);
        let pts = s.grid_points(&res).unwrap();
        let flat: Vec<(f64, String)> = pts
            .iter()
            .map(|p| (p.f64("x").unwrap(), p.get("c").unwrap().to_string()))
            .collect();
        let expected: Vec<(f64, String)> = [
            (0.0, "a"),
            (0.0, "b"),
            (0.5, "a"),
            (0.5, "b"),
            (1.0, "a"),
            (1.0, "b"),
        ]
        .iter()
        .map(|(x, c)| (*x, c.to_string()))
        .collect();
        assert_eq!(flat, expected);
        assert_eq!(s.grid_len(&res).unwrap(), 6);
    }

    #[test]
    fn grid_log_and_integer_axes() {
        let s = space(vec![ParamSpec::new(
            "k",
            Domain::LogContinuous { lo: 1.0, hi: 100.0 },
        )]);
        let pts = s
            .grid_points(&BTreeMap::from([("k".to_string(), 3)]))
            .unwrap();
        let v: Vec<f64> = pts.iter().map(|p| p.f64("k").unwrap()).collect();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 10.0).abs() < 1e-12);
        assert_eq!(v[2], 100.0);

        let s = space(vec![ParamSpec::new("n", Domain::Integer { lo: 1, hi: 3 })]);
        let pts = s
            .grid_points(&BTreeMap::from([("n".to_string(), 3)]))
            .unwrap();
        assert_eq!(
            pts.iter()
                .map(|p| p.get("n").unwrap().clone())
                .collect::<Vec<_>>(),
            vec![ParamValue::Int(1), ParamValue::Int(2), ParamValue::Int(3)]
        );
        // more points than integers collapses duplicates
        let pts = s
            .grid_points(&BTreeMap::from([("n".to_string(), 7)]))
            .unwrap();
        assert_eq!(pts.len(), 3);
        let mid = s
            .grid_points(&BTreeMap::from([("n".to_string(), 1)]))
            .unwrap();
        assert_eq!(mid[0].get("n"), Some(&ParamValue::Int(2)));
    }

    #[test]
    fn grid_resolution_errors() {
        let s = space(vec![ParamSpec::new(
            "x",
            Domain::Continuous { lo: 0.0, hi: 1.0 },
        )]);
        assert!(matches!(
            s.grid_points(&BTreeMap::from([("x".to_string(), 0)])),
            Err(Error::InvalidResolution(_))
        ));
        assert!(matches!(
            s.grid_points(&BTreeMap::new()),
            Err(Error::InvalidResolution(_))
        ));
    }

    #[test]
    fn sampling_degenerate_domains() {
        let s = space(vec![
            ParamSpec::new(
                "c",
                Domain::Categorical {
                    choices: vec!["only".into()],
                },
            ),
            ParamSpec::new("n", Domain::Integer { lo: 5, hi: 5 }),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v = s.sample_uniform(&mut rng);
            assert_eq!(v.get("c"), Some(&ParamValue::Str("only".into())));
            assert_eq!(v.get("n"), Some(&ParamValue::Int(5)));
        }
    }

    #[test]
    fn uniform_mean() {
        let s = space(vec![ParamSpec::new(
            "x",
            Domain::Continuous { lo: 0.0, hi: 1.0 },
        )]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mean = (0..10_000)
            .map(|_| s.sample_uniform(&mut rng).f64("x").unwrap())
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn integer_sampling_covers_range_evenly() {
        let s = space(vec![ParamSpec::new("n", Domain::Integer { lo: 1, hi: 4 })]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..8_000 {
            let n = s.sample_uniform(&mut rng).f64("n").unwrap() as usize;
            counts[n - 1] += 1;
        }
        assert!(
            counts.iter().all(|&c| (1_700..2_300).contains(&c)),
            "{counts:?}"
        );
    }

    #[test]
    fn unit_cube_examples() {
        let s = space(vec![
            ParamSpec::new("a", Domain::Continuous { lo: 2.0, hi: 6.0 }),
            ParamSpec::new("b", Domain::LogContinuous { lo: 1.0, hi: 100.0 }),
            ParamSpec::new("n", Domain::Integer { lo: 1, hi: 3 }),
        ]);
        let v = ParamVector(BTreeMap::from([
            ("a".to_string(), ParamValue::Float(4.0)),
            ("b".to_string(), ParamValue::Float(10.0)),
            ("n".to_string(), ParamValue::Int(2)),
        ]));
        let u = s.to_unit_cube(&v).unwrap();
        assert_eq!(u[0], 0.5);
        assert!((u[1] - 0.5).abs() < 1e-15);
        assert!((u[2] - 0.5).abs() < 1e-15);
        let decoded = s.from_unit_cube(&[0.5, 0.5, 0.49]).unwrap();
        assert_eq!(decoded.get("n"), Some(&ParamValue::Int(2)));
        assert_eq!(
            s.from_unit_cube(&[-3.0, 7.0, 0.0]).unwrap().f64("a"),
            Some(2.0)
        );
    }

    #[test]
    fn categorical_is_not_encodable() {
        let s = space(vec![ParamSpec::new(
            "c",
            Domain::Categorical {
                choices: vec!["a".into()],
            },
        )]);
        assert!(matches!(
            s.from_unit_cube(&[0.2]),
            Err(Error::UnsupportedDomain(_))
        ));
        let v = ParamVector(BTreeMap::from([(
            "c".to_string(),
            ParamValue::Str("a".into()),
        )]));
        assert!(matches!(
            s.to_unit_cube(&v),
            Err(Error::UnsupportedDomain(_))
        ));
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(SearchSpace::new(vec![ParamSpec::new(
            "x",
            Domain::LogContinuous { lo: 0.0, hi: 1.0 }
        )])
        .is_err());
        assert!(
            SearchSpace::new(vec![ParamSpec::new("x", Domain::Integer { lo: 2, hi: 1 })]).is_err()
        );
        assert!(SearchSpace::new(vec![ParamSpec::new(
            "c",
            Domain::Categorical { choices: vec![] }
        )])
        .is_err());
        assert!(SearchSpace::new(vec![ParamSpec::new(
            "c",
            Domain::Categorical {
                choices: vec!["a".into(), "a".into()]
            }
        )])
        .is_err());
    }

    #[test]
    fn serde_shape() {
        let s: SearchSpace = serde_json::from_str(
            r#"[{"name":"k","type":"log_integer","lo":8,"hi":256},{"name":"algo","type":"categorical","choices":["als","bpr"]}]"#,
        )
        .unwrap();
        assert_eq!(s.dim(), 2);
        let back: SearchSpace = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<SearchSpace>(
            r#"[{"name":"x","type":"continuous","lo":1,"hi":0}]"#
        )
        .is_err());
    }

    fn arb_domain() -> impl Strategy<Value = Domain> {
        prop_oneof![
            (-100.0..100.0f64, 0.001..50.0f64)
                .prop_map(|(lo, w)| Domain::Continuous { lo, hi: lo + w }),
            (1e-6..10.0f64, 1.01..1e4f64)
                .prop_map(|(lo, f)| Domain::LogContinuous { lo, hi: lo * f }),
            (-50i64..50, 0i64..40).prop_map(|(lo, w)| Domain::Integer { lo, hi: lo + w }),
            (1i64..100, 0i64..1000).prop_map(|(lo, w)| Domain::LogInteger { lo, hi: lo + w }),
            (1usize..5).prop_map(|k| Domain::Categorical {
                choices: (0..k).map(|i| format!("c{i}")).collect()
            }),
        ]
    }

    fn arb_space() -> impl Strategy<Value = SearchSpace> {
        proptest::collection::vec(arb_domain(), 1..5).prop_map(|domains| {
            SearchSpace::new(
                domains
                    .into_iter()
                    .enumerate()
                    .map(|(i, d)| ParamSpec::new(format!("p{i}"), d))
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn samples_and_grid_points_are_in_domain(space in arb_space(), seed in any::<u64>(), r in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                prop_assert!(space.contains(&space.sample_uniform(&mut rng)));
            }
            let res: BTreeMap<String, usize> = space.params().iter().map(|p| (p.name.clone(), r)).collect();
            let pts = space.grid_points(&res).unwrap();
            prop_assert_eq!(pts.len(), space.grid_len(&res).unwrap());
            for (i, p) in pts.iter().enumerate() {
                prop_assert!(space.contains(p));
                prop_assert!(!pts[..i].contains(p));
            }
        }

        #[test]
        fn unit_cube_round_trip(space in arb_space(), u in proptest::collection::vec(-0.2..1.2f64, 5)) {
            prop_assume!(!space.has_categorical());
            let u = &u[..space.dim()];
            let v = space.from_unit_cube(u).unwrap();
            prop_assert!(space.contains(&v));
            let back = space.to_unit_cube(&v).unwrap();
            // decoding the re-encoded point reproduces the same configuration
            let again = space.from_unit_cube(&back).unwrap();
            for (name, value) in &v.0 {
                match (value, &again.0[name]) {
                    (ParamValue::Float(a), ParamValue::Float(b)) => {
                        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b)
                    }
                    (a, b) => prop_assert_eq!(a, b),
                }
            }
            for ((p, &x), &y) in space.params().iter().zip(u).zip(&back) {
                if matches!(p.domain, Domain::Continuous { .. } | Domain::LogContinuous { .. }) {
                    prop_assert!((x.clamp(0.0, 1.0) - y).abs() < 1e-9, "{} vs {}", x, y);
                }
            }
        }
    }
}
