//! Properties `Gamma: simplex -> R`: built-ins with closed-form evaluators
//! and black-box custom evaluators.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simplex::{self, Distribution, OutcomeSpace, SimplexError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropertyError {
    #[error("{kind} needs outcome values")]
    MissingValues { kind: &'static str },
    #[error("parameter `{name}` = {value} outside (0, 1)")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("ratio denominator entry {index} is {value}; must be strictly positive")]
    NonPositiveDenominator { index: usize, value: f64 },
    #[error("ratio numerator has {numerator} entries, denominator {denominator}")]
    RatioLengthMismatch { numerator: usize, denominator: usize },
    #[error("property is constant on the simplex (image width {width})")]
    ConstantProperty { width: f64 },
    #[error("level {r} outside the interior ({lo}, {hi})")]
    LevelOutOfRange { r: f64, lo: f64, hi: f64 },
    #[error("custom properties cannot be described in JSON")]
    CustomInJson,
    #[error("invalid property JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Space(#[from] SimplexError),
}

/// Black-box evaluator for a custom property.
pub type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct CustomProperty {
    pub id: String,
    pub eval: Evaluator,
}

impl fmt::Debug for CustomProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomProperty").field("id", &self.id).finish()
    }
}

#[derive(Debug, Clone)]
pub enum PropertyKind {
    Mean,
    Expectile {
        tau: f64,
    },
    Ratio {
        numerator: Vec<f64>,
        denominator: Vec<f64>,
    },
    Variance,
    Quantile {
        alpha: f64,
    },
    Custom(CustomProperty),
}

impl PropertyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PropertyKind::Mean => "mean",
            PropertyKind::Expectile { .. } => "expectile",
            PropertyKind::Ratio { .. } => "ratio",
            PropertyKind::Variance => "variance",
            PropertyKind::Quantile { .. } => "quantile",
            PropertyKind::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropertySpec {
    kind: PropertyKind,
    space: OutcomeSpace,
}

/// Closed image interval `[lo, hi]`; levels are taken from its interior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageInterval {
    pub lo: f64,
    pub hi: f64,
    /// Set when the bounds come from sampling rather than a closed form.
    pub estimated: bool,
}

impl ImageInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains_open(&self, r: f64) -> bool {
        r > self.lo && r < self.hi
    }

    /// `[lo + m (hi - lo), hi - m (hi - lo)]`.
    pub fn trimmed(&self, margin: f64) -> (f64, f64) {
        let w = self.width();
        (self.lo + margin * w, self.hi - margin * w)
    }
}

fn check_unit_open(name: &'static str, value: f64) -> Result<(), PropertyError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(PropertyError::ParameterOutOfRange { name, value })
    }
}

impl PropertySpec {
    pub fn mean(values: Vec<f64>) -> Result<Self, PropertyError> {
        Ok(Self {
            kind: PropertyKind::Mean,
            space: OutcomeSpace::with_labels(values)?,
        })
    }

    pub fn expectile(tau: f64, values: Vec<f64>) -> Result<Self, PropertyError> {
        check_unit_open("tau", tau)?;
        Ok(Self {
            kind: PropertyKind::Expectile { tau },
            space: OutcomeSpace::with_labels(values)?,
        })
    }

    pub fn variance(values: Vec<f64>) -> Result<Self, PropertyError> {
        Ok(Self {
            kind: PropertyKind::Variance,
            space: OutcomeSpace::with_labels(values)?,
        })
    }

    pub fn quantile(alpha: f64, values: Vec<f64>) -> Result<Self, PropertyError> {
        check_unit_open("alpha", alpha)?;
        Ok(Self {
            kind: PropertyKind::Quantile { alpha },
            space: OutcomeSpace::with_labels(values)?,
        })
    }

    pub fn ratio(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self, PropertyError> {
        if numerator.len() != denominator.len() {
            return Err(PropertyError::RatioLengthMismatch {
                numerator: numerator.len(),
                denominator: denominator.len(),
            });
        }
        for (index, &value) in denominator.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PropertyError::NonPositiveDenominator { index, value });
            }
        }
        let space = OutcomeSpace::new(numerator.len())?;
        Ok(Self {
            kind: PropertyKind::Ratio {
                numerator,
                denominator,
            },
            space,
        })
    }

    pub fn custom(
        id: impl Into<String>,
        space: OutcomeSpace,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: PropertyKind::Custom(CustomProperty {
                id: id.into(),
                eval: Arc::new(eval),
            }),
            space,
        }
    }

    pub fn kind(&self) -> &PropertyKind {
        &self.kind
    }

    pub fn space(&self) -> &OutcomeSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Built-ins whose quasi-monotonicity follows from linear structure.
    pub fn has_exact_guarantee(&self) -> bool {
        matches!(self.kind, PropertyKind::Mean | PropertyKind::Ratio { .. })
    }

    fn labels(&self) -> &[f64] {
        // Label-based kinds are only constructible with labels.
        self.space.labels().unwrap_or(&[])
    }

    pub fn eval(&self, p: &Distribution) -> f64 {
        self.eval_weights(p.weights())
    }

    pub fn eval_weights(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.dim(), "distribution outside the property's space");
        match &self.kind {
            PropertyKind::Mean => simplex::dot(self.labels(), w),
            PropertyKind::Expectile { tau } => expectile(*tau, self.labels(), w),
            PropertyKind::Ratio {
                numerator,
                denominator,
            } => simplex::dot(numerator, w) / simplex::dot(denominator, w),
            PropertyKind::Variance => {
                let y = self.labels();
                let m = simplex::dot(y, w);
                let m2: f64 = y.iter().zip(w).map(|(v, p)| v * v * p).sum();
                m2 - m * m
            }
            PropertyKind::Quantile { alpha } => {
                let y = self.labels();
                let mut cum = 0.0;
                for (v, p) in y.iter().zip(w) {
                    cum += p;
                    if cum >= *alpha {
                        return *v;
                    }
                }
                y[y.len() - 1]
            }
            PropertyKind::Custom(c) => (c.eval)(w),
        }
    }

    pub fn image_interval(&self) -> Result<ImageInterval, PropertyError> {
        let (lo, hi, estimated) = match &self.kind {
            PropertyKind::Mean | PropertyKind::Expectile { .. } | PropertyKind::Quantile { .. } => {
                let y = self.labels();
                (y[0], y[y.len() - 1], false)
            }
            PropertyKind::Ratio {
                numerator,
                denominator,
            } => {
                let quotients = numerator.iter().zip(denominator).map(|(a, b)| a / b);
                let lo = quotients.clone().fold(f64::INFINITY, f64::min);
                let hi = quotients.fold(f64::NEG_INFINITY, f64::max);
                (lo, hi, false)
            }
            PropertyKind::Variance => {
                // Maximum variance puts half the mass on each extreme label.
                let y = self.labels();
                let half_range = 0.5 * (y[y.len() - 1] - y[0]);
                (0.0, half_range * half_range, false)
            }
            PropertyKind::Custom(_) => {
                let n = self.dim();
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut visit = |v: f64| {
                    lo = lo.min(v);
                    hi = hi.max(v);
                };
                for i in 0..n {
                    visit(self.eval(&self.space.vertex(i)));
                }
                let mut rng = simplex::rng_from_seed(0);
                for _ in 0..1000 {
                    visit(self.eval(&simplex::sample_uniform(n, &mut rng)));
                }
                (lo, hi, true)
            }
        };
        let width = hi - lo;
        if !(width >= crate::tolerance::Tolerances::default().norm) {
            return Err(PropertyError::ConstantProperty { width });
        }
        Ok(ImageInterval { lo, hi, estimated })
    }

    /// Closed-form functional `z` with `sign <z, P> = sign(Gamma(P) - r)`,
    /// when one is known.
    pub fn oracle_functional(&self, r: f64) -> Result<Option<Vec<f64>>, PropertyError> {
        let interval = self.image_interval()?;
        if !interval.contains_open(r) {
            return Err(PropertyError::LevelOutOfRange {
                r,
                lo: interval.lo,
                hi: interval.hi,
            });
        }
        let z = match &self.kind {
            PropertyKind::Mean => self.labels().iter().map(|y| y - r).collect(),
            PropertyKind::Expectile { tau } => self
                .labels()
                .iter()
                .map(|y| tau * (y - r).max(0.0) - (1.0 - tau) * (r - y).max(0.0))
                .collect(),
            PropertyKind::Ratio {
                numerator,
                denominator,
            } => numerator
                .iter()
                .zip(denominator)
                .map(|(a, b)| a - r * b)
                .collect(),
            PropertyKind::Variance | PropertyKind::Quantile { .. } | PropertyKind::Custom(_) => {
                return Ok(None)
            }
        };
        Ok(Some(z))
    }

    pub fn from_json(text: &str) -> Result<Self, PropertyError> {
        let raw: PropertyJson = serde_json::from_str(text).map_err(|e| PropertyError::Json(e.to_string()))?;
        raw.try_into()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let raw = match &self.kind {
            PropertyKind::Mean => PropertyJson::Mean {
                values: self.labels().to_vec(),
            },
            PropertyKind::Expectile { tau } => PropertyJson::Expectile {
                tau: *tau,
                values: self.labels().to_vec(),
            },
            PropertyKind::Ratio {
                numerator,
                denominator,
            } => PropertyJson::Ratio {
                numerator: numerator.clone(),
                denominator: denominator.clone(),
            },
            PropertyKind::Variance => PropertyJson::Variance {
                values: self.labels().to_vec(),
            },
            PropertyKind::Quantile { alpha } => PropertyJson::Quantile {
                alpha: *alpha,
                values: self.labels().to_vec(),
            },
            PropertyKind::Custom(c) => {
                return serde_json::json!({ "kind": "custom", "id": c.id, "n": self.dim() })
            }
        };
        serde_json::to_value(raw).expect("property JSON is always serializable")
    }
}

/// Unique `e` with `tau E(Y - e)_+ = (1 - tau) E(e - Y)_+`, by bisection on
/// the label range. The balance function is strictly decreasing in `e`.
fn expectile(tau: f64, y: &[f64], w: &[f64]) -> f64 {
    let mut lo = y[0];
    let mut hi = y[y.len() - 1];
    let resolution = f64::EPSILON * (hi - lo);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = expectile_balance(tau, y, w, mid);
        if g > 0.0 {
            lo = mid;
        } else if g < 0.0 {
            hi = mid;
        } else {
            return mid;
        }
    }
    if expectile_balance(tau, y, w, lo).abs() <= expectile_balance(tau, y, w, hi).abs() {
        lo
    } else {
        hi
    }
}

pub(crate) fn expectile_balance(tau: f64, y: &[f64], w: &[f64], e: f64) -> f64 {
    let mut up = 0.0;
    let mut down = 0.0;
    for (v, p) in y.iter().zip(w) {
        if *v > e {
            up += p * (v - e);
        } else {
            down += p * (e - v);
        }
    }
    tau * up - (1.0 - tau) * down
}

/// Wire format of property descriptions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum PropertyJson {
    Mean {
        values: Vec<f64>,
    },
    Expectile {
        tau: f64,
        values: Vec<f64>,
    },
    Ratio {
        numerator: Vec<f64>,
        denominator: Vec<f64>,
    },
    Variance {
        values: Vec<f64>,
    },
    Quantile {
        alpha: f64,
        values: Vec<f64>,
    },
    Custom {},
}

impl TryFrom<PropertyJson> for PropertySpec {
    type Error = PropertyError;

    fn try_from(raw: PropertyJson) -> Result<Self, Self::Error> {
        match raw {
            PropertyJson::Mean { values } => PropertySpec::mean(values),
            PropertyJson::Expectile { tau, values } => PropertySpec::expectile(tau, values),
            PropertyJson::Ratio {
                numerator,
                denominator,
            } => PropertySpec::ratio(numerator, denominator),
            PropertyJson::Variance { values } => PropertySpec::variance(values),
            PropertyJson::Quantile { alpha, values } => PropertySpec::quantile(alpha, values),
            PropertyJson::Custom {} => Err(PropertyError::CustomInJson),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{make_distribution, mix, rng_from_seed, sample_uniform, NormSpec};
    use proptest::prelude::*;

    fn d(w: &[f64]) -> Distribution {
        make_distribution(w.to_vec()).unwrap()
    }

    #[test]
    fn eval_examples() {
        let mean = PropertySpec::mean(vec![0.0, 1.0]).unwrap();
        assert_eq!(mean.eval(&d(&[0.25, 0.75])), 0.75);

        let var = PropertySpec::variance(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(var.eval(&d(&[0.5, 0.0, 0.5])), 1.0);

        let e = PropertySpec::expectile(0.5, vec![0.0, 1.0, 3.0]).unwrap();
        let m = PropertySpec::mean(vec![0.0, 1.0, 3.0]).unwrap();
        let p = d(&[0.2, 0.5, 0.3]);
        assert!((e.eval(&p) - m.eval(&p)).abs() < 1e-12);
    }

    #[test]
    fn quantile_is_left_continuous() {
        let q = PropertySpec::quantile(0.5, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(q.eval(&d(&[0.5, 0.0, 0.5])), 1.0);
        assert_eq!(q.eval(&d(&[0.49, 0.02, 0.49])), 2.0);
        assert_eq!(q.eval(&d(&[0.2, 0.2, 0.6])), 3.0);
    }

    #[test]
    fn image_interval_examples() {
        let mean = PropertySpec::mean(vec![0.0, 1.0]).unwrap();
        let i = mean.image_interval().unwrap();
        assert_eq!((i.lo, i.hi, i.estimated), (0.0, 1.0, false));

        let ratio = PropertySpec::ratio(vec![1.0, 2.0, 4.0], vec![1.0, 1.0, 2.0]).unwrap();
        let i = ratio.image_interval().unwrap();
        assert_eq!((i.lo, i.hi), (1.0, 2.0));

        let e = PropertySpec::expectile(0.9, vec![0.0, 1.0]).unwrap();
        let i = e.image_interval().unwrap();
        assert_eq!((i.lo, i.hi), (0.0, 1.0));
        assert_eq!(e.eval(&d(&[1.0, 0.0])), 0.0);
        assert_eq!(e.eval(&d(&[0.0, 1.0])), 1.0);

        let c = PropertySpec::custom("const", OutcomeSpace::new(3).unwrap(), |_| 4.0);
        assert!(matches!(
            c.image_interval(),
            Err(PropertyError::ConstantProperty { .. })
        ));

        let c = PropertySpec::custom("first", OutcomeSpace::new(3).unwrap(), |w| w[0]);
        let i = c.image_interval().unwrap();
        assert!(i.estimated);
        assert_eq!((i.lo, i.hi), (0.0, 1.0));
    }

    #[test]
    fn oracle_examples() {
        let mean = PropertySpec::mean(vec![0.0, 1.0]).unwrap();
        let z = mean.oracle_functional(0.25).unwrap().unwrap();
        assert_eq!(z, vec![-0.25, 0.75]);
        let zn = crate::simplex::normalize_dual(&z, NormSpec::l1()).unwrap();
        assert_eq!(zn, vec![-1.0 / 3.0, 1.0]);

        let ratio = PropertySpec::ratio(vec![1.0, 2.0, 4.0], vec![1.0, 1.0, 2.0]).unwrap();
        let z = ratio.oracle_functional(1.5).unwrap().unwrap();
        assert_eq!(z, vec![-0.5, 0.5, 1.0]);

        let e = PropertySpec::expectile(0.5, vec![0.0, 1.0]).unwrap();
        let z = e.oracle_functional(0.5).unwrap().unwrap();
        assert_eq!(z, vec![-0.25, 0.25]);

        assert!(matches!(
            mean.oracle_functional(1.0),
            Err(PropertyError::LevelOutOfRange { .. })
        ));
        let var = PropertySpec::variance(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(var.oracle_functional(0.5).unwrap(), None);
    }

    #[test]
    fn parameter_validation() {
        assert!(PropertySpec::expectile(1.0, vec![0.0, 1.0]).is_err());
        assert!(PropertySpec::quantile(0.0, vec![0.0, 1.0]).is_err());
        assert!(matches!(
            PropertySpec::ratio(vec![1.0, 2.0], vec![1.0, 0.0]),
            Err(PropertyError::NonPositiveDenominator { index: 1, .. })
        ));
        assert!(PropertySpec::ratio(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = PropertySpec::from_json(r#"{"kind": "expectile", "tau": 0.9, "values": [0,1,2]}"#).unwrap();
        assert!(matches!(p.kind(), PropertyKind::Expectile { tau } if *tau == 0.9));
        let back = PropertySpec::from_json(&p.to_json().to_string()).unwrap();
        assert_eq!(back.to_json(), p.to_json());

        let r =
            PropertySpec::from_json(r#"{"kind":"ratio","numerator":[1,2,4],"denominator":[1,1,2]}"#).unwrap();
        assert_eq!(r.dim(), 3);
        assert!(matches!(
            PropertySpec::from_json(r#"{"kind":"custom"}"#),
            Err(PropertyError::CustomInJson)
        ));
        assert!(matches!(
            PropertySpec::from_json(r#"{"kind":"mean","values":[0,1],"tau":3}"#),
            Err(PropertyError::Json(_))
        ));
    }

    fn builtins_with_oracle() -> Vec<PropertySpec> {
        vec![
            PropertySpec::mean(vec![-1.0, 0.5, 2.0, 3.0]).unwrap(),
            PropertySpec::expectile(0.3, vec![0.0, 1.0, 2.0, 5.0]).unwrap(),
            PropertySpec::expectile(0.7, vec![0.0, 1.0, 2.0, 5.0]).unwrap(),
            PropertySpec::ratio(vec![1.0, 2.0, 4.0, -1.0], vec![1.0, 1.0, 2.0, 0.5]).unwrap(),
        ]
    }

    #[test]
    fn oracle_sign_law() {
        let tau_level = crate::tolerance::Tolerances::default().level;
        let mut rng = rng_from_seed(3);
        for prop in builtins_with_oracle() {
            let i = prop.image_interval().unwrap();
            for _ in 0..1000 {
                let p = sample_uniform(prop.dim(), &mut rng);
                let r = i.lo + (i.hi - i.lo) * (0.001 + 0.998 * rand::Rng::gen::<f64>(&mut rng));
                let z = prop.oracle_functional(r).unwrap().unwrap();
                let s = crate::simplex::dot(&z, p.weights());
                let g = prop.eval(&p) - r;
                if g.abs() <= tau_level {
                    continue;
                }
                assert_eq!(s > 0.0, g > 0.0, "{:?} r={r} P={:?}", prop.kind(), p);
            }
        }
    }

    proptest! {
        #[test]
        fn mean_is_affine_along_segments(
            a in prop::collection::vec(0.0f64..1.0, 3),
            b in prop::collection::vec(0.0f64..1.0, 3),
            t in 0.0f64..1.0,
        ) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            prop_assume!(a.iter().sum::<f64>() > 0.1 && b.iter().sum::<f64>() > 0.1);
            let x0 = d(&norm(a));
            let x1 = d(&norm(b));
            let mean = PropertySpec::mean(vec![0.0, 1.0, 2.0]).unwrap();
            let xt = mix(&x0, &x1, t, 1e-9);
            let lhs = mean.eval(&xt);
            let rhs = (1.0 - t) * mean.eval(&x0) + t * mean.eval(&x1);
            prop_assert!((lhs - rhs).abs() <= 1e-14);
        }

        #[test]
        fn expectile_balance_residual(
            seed in any::<u64>(),
            tau in 0.01f64..0.99,
        ) {
            let y = vec![-2.0, 0.0, 0.5, 3.0, 7.0];
            let mut rng = rng_from_seed(seed);
            let p = sample_uniform(5, &mut rng);
            let e = PropertySpec::expectile(tau, y.clone()).unwrap().eval(&p);
            prop_assert!(expectile_balance(tau, &y, p.weights(), e).abs() <= 1e-10);
        }
    }
}
