//! Ambient geometry on the probability simplex of a finite outcome space.
//!
//! Points live in `R^n` equipped with an `l_p` norm; linear functionals are
//! measured in the dual `l_q` norm. The simplex is the set of nonnegative
//! vectors whose coordinate sum is one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tolerance::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("outcome space needs at least two outcomes, got {0}")]
    TooFewOutcomes(usize),
    #[error("outcome labels must be strictly increasing (index {index})")]
    LabelsNotIncreasing { index: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("weights sum to {sum}, not 1 (last index {last_index})")]
    SumNotOne { sum: f64, last_index: usize },
    #[error("cannot normalize the zero vector")]
    ZeroVector,
    #[error("mixing parameter {0} outside [0, 1]")]
    TOutOfRange(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("norm exponent {0} outside [1, inf]")]
    BadExponent(f64),
}

/// A finite outcome set `{omega_1, ..., omega_n}` with optional real labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpace {
    n: usize,
    labels: Option<Vec<f64>>,
}

impl OutcomeSpace {
    pub fn new(n: usize) -> Result<Self, SimplexError> {
        if n < 2 {
            return Err(SimplexError::TooFewOutcomes(n));
        }
        Ok(Self { n, labels: None })
    }

    pub fn with_labels(labels: Vec<f64>) -> Result<Self, SimplexError> {
        if labels.len() < 2 {
            return Err(SimplexError::TooFewOutcomes(labels.len()));
        }
        for (i, w) in labels.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(SimplexError::LabelsNotIncreasing { index: i + 1 });
            }
        }
        Ok(Self {
            n: labels.len(),
            labels: Some(labels),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    /// The `i`-th vertex of the simplex (point mass at outcome `i`).
    pub fn vertex(&self, i: usize) -> Distribution {
        let mut w = vec![0.0; self.n];
        w[i] = 1.0;
        Distribution { w }
    }

    /// Uniform weights, the base point used for tie-breaking.
    pub fn barycenter(&self) -> Distribution {
        Distribution {
            w: vec![1.0 / self.n as f64; self.n],
        }
    }
}

/// Exponent pair `(p, q)` with `1/p + 1/q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    p: f64,
    q: f64,
}

impl NormSpec {
    pub fn new(p: f64) -> Result<Self, SimplexError> {
        if p.is_nan() || p < 1.0 {
            return Err(SimplexError::BadExponent(p));
        }
        let q = if p == 1.0 {
            f64::INFINITY
        } else if p.is_infinite() {
            1.0
        } else {
            p / (p - 1.0)
        };
        Ok(Self { p, q })
    }

    pub fn l1() -> Self {
        Self {
            p: 1.0,
            q: f64::INFINITY,
        }
    }

    pub fn l2() -> Self {
        Self { p: 2.0, q: 2.0 }
    }

    pub fn linf() -> Self {
        Self {
            p: f64::INFINITY,
            q: 1.0,
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `2^(1 - 1/p)`, the cone-splitting constant for `l_p`.
    pub fn cone_constant(&self) -> f64 {
        2f64.powf(1.0 - 1.0 / self.p)
    }
}

impl Default for NormSpec {
    fn default() -> Self {
        Self::l1()
    }
}

/// `l_p` norm for `p` in `[1, inf]`.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        scale
            * x.iter()
                .map(|v| (v.abs() / scale).powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm of `z` viewed as a functional on `(R^n, ||.||_p)`, i.e. `||z||_q`.
pub fn dual_norm(z: &[f64], spec: NormSpec) -> f64 {
    lp_norm(z, spec.q)
}

pub fn normalize_dual(z: &[f64], spec: NormSpec) -> Result<Vec<f64>, SimplexError> {
    let norm = dual_norm(z, spec);
    if norm == 0.0 || !norm.is_finite() {
        return Err(SimplexError::ZeroVector);
    }
    Ok(z.iter().map(|v| v / norm).collect())
}

/// A point of the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution {
    w: Vec<f64>,
}

impl Distribution {
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.w
    }

    /// Wraps weights produced by convex combinations of valid points,
    /// re-normalizing only when the sum has drifted beyond `tau_sum`.
    pub(crate) fn from_mixture(mut w: Vec<f64>, tau_sum: f64) -> Self {
        for v in w.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > tau_sum {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        Self { w }
    }
}

pub fn make_distribution(w: Vec<f64>) -> Result<Distribution, SimplexError> {
    make_distribution_with(w, Tolerances::default().sum)
}

pub fn make_distribution_with(w: Vec<f64>, tau_sum: f64) -> Result<Distribution, SimplexError> {
    if w.len() < 2 {
        return Err(SimplexError::TooFewOutcomes(w.len()));
    }
    for (index, &value) in w.iter().enumerate() {
        if !value.is_finite() {
            return Err(SimplexError::NonFiniteWeight { index });
        }
        if value < 0.0 {
            return Err(SimplexError::NegativeWeight { index, value });
        }
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > tau_sum {
        return Err(SimplexError::SumNotOne {
            sum,
            last_index: w.len() - 1,
        });
    }
    Ok(Distribution { w })
}

/// Splitting of a vector into its positive and negative cone parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSplit {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub bound_k: f64,
}

impl ConeSplit {
    /// `(||pos||_p + ||neg||_p, K ||h||_p)`.
    pub fn bound_sides(&self, spec: NormSpec) -> (f64, f64) {
        let h: Vec<f64> = self.pos.iter().zip(&self.neg).map(|(a, b)| a - b).collect();
        (
            lp_norm(&self.pos, spec.p) + lp_norm(&self.neg, spec.p),
            self.bound_k * lp_norm(&h, spec.p),
        )
    }
}

pub fn cone_decompose(h: &[f64], spec: NormSpec) -> ConeSplit {
    ConeSplit {
        pos: h.iter().map(|v| v.max(0.0)).collect(),
        neg: h.iter().map(|v| (-v).max(0.0)).collect(),
        bound_k: spec.cone_constant(),
    }
}

/// The point `(1 - t) x0 + t x1`.
pub fn segment(x0: &Distribution, x1: &Distribution, t: f64) -> Result<Distribution, SimplexError> {
    if x0.dim() != x1.dim() {
        return Err(SimplexError::DimensionMismatch(x0.dim(), x1.dim()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(SimplexError::TOutOfRange(t));
    }
    Ok(mix(x0, x1, t, Tolerances::default().sum))
}

/// Unchecked version of [`segment`] for internal loops.
pub(crate) fn mix(x0: &Distribution, x1: &Distribution, t: f64, tau_sum: f64) -> Distribution {
    if t == 0.0 {
        return x0.clone();
    }
    if t == 1.0 {
        return x1.clone();
    }
    let w =
        x0.w.iter()
            .zip(&x1.w)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
    Distribution::from_mixture(w, tau_sum)
}

/// Uniform sample from the simplex, drawn from the gaps of `n - 1` sorted
/// uniforms.
pub fn sample_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Distribution {
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut w = Vec::with_capacity(n);
    let mut prev = 0.0;
    for c in cuts {
        w.push(c - prev);
        prev = c;
    }
    w.push(1.0 - prev);
    Distribution::from_mixture(w, Tolerances::default().sum)
}

pub fn sample_distribution(space: &OutcomeSpace, seed: u64) -> Distribution {
    let mut rng = rng_from_seed(seed);
    sample_uniform(space.dim(), &mut rng)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a master seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws probe points that cover the whole simplex including its corners:
/// vertices, uniform points, and vertex/uniform blends.
pub(crate) fn draw_probe<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Distribution {
    let kind = rng.gen_range(0..4u8);
    match kind {
        0 => {
            let mut w = vec![0.0; n];
            w[rng.gen_range(0..n)] = 1.0;
            Distribution { w }
        }
        1 => sample_uniform(n, rng),
        _ => {
            let i = rng.gen_range(0..n);
            let u = sample_uniform(n, rng);
            let s: f64 = rng.gen();
            let mut w: Vec<f64> = u.w.iter().map(|v| (1.0 - s) * v).collect();
            w[i] += s;
            Distribution::from_mixture(w, Tolerances::default().sum)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn make_distribution_examples() {
        assert!(make_distribution(vec![0.5, 0.5]).is_ok());
        assert!(make_distribution(vec![1.0, 0.0]).is_ok());
        assert!(matches!(
            make_distribution(vec![0.6, 0.6]),
            Err(SimplexError::SumNotOne { .. })
        ));
        assert!(matches!(
            make_distribution(vec![1.5, -0.5]),
            Err(SimplexError::NegativeWeight { index: 1, .. })
        ));
        assert!(matches!(
            make_distribution(vec![1.0]),
            Err(SimplexError::TooFewOutcomes(1))
        ));
    }

    #[test]
    fn outcome_space_validation() {
        assert!(OutcomeSpace::new(1).is_err());
        assert!(OutcomeSpace::with_labels(vec![0.0, 1.0, 1.0]).is_err());
        let s = OutcomeSpace::with_labels(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.dim(), 3);
    }

    #[test]
    fn dual_exponents() {
        assert_eq!(NormSpec::new(1.0).unwrap().q(), f64::INFINITY);
        assert_eq!(NormSpec::new(f64::INFINITY).unwrap().q(), 1.0);
        assert_eq!(NormSpec::new(4.0).unwrap().q(), 4.0 / 3.0);
        assert!(NormSpec::new(0.5).is_err());
    }

    #[test]
    fn dual_norm_examples() {
        assert_eq!(dual_norm(&[0.0, 2.0], NormSpec::l1()), 2.0);
        assert_eq!(dual_norm(&[3.0, 4.0], NormSpec::l2()), 5.0);
        assert_eq!(dual_norm(&[-1.0, 3.0], NormSpec::l1()), 3.0);
        assert_eq!(dual_norm(&[-1.0, 3.0], NormSpec::linf()), 4.0);
    }

    #[test]
    fn normalize_dual_examples() {
        assert_eq!(
            normalize_dual(&[0.0, 2.0], NormSpec::l1()).unwrap(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            normalize_dual(&[-1.0, 3.0], NormSpec::l1()).unwrap(),
            vec![-1.0 / 3.0, 1.0]
        );
        let v = normalize_dual(&[3.0, 4.0], NormSpec::l2()).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(
            normalize_dual(&[0.0, 0.0], NormSpec::l2()),
            Err(SimplexError::ZeroVector)
        );
    }

    #[test]
    fn cone_examples() {
        let c = cone_decompose(&[1.0, -2.0], NormSpec::l1());
        assert_eq!(c.pos, vec![1.0, 0.0]);
        assert_eq!(c.neg, vec![0.0, 2.0]);
        assert_eq!(c.bound_sides(NormSpec::l1()), (3.0, 3.0));

        let c = cone_decompose(&[0.0, 0.0], NormSpec::l1());
        assert_eq!(c.pos, vec![0.0, 0.0]);
        assert_eq!(c.neg, vec![0.0, 0.0]);

        // p = 2 equality case: 2 <= 2^(1/2) * sqrt(2)
        let c = cone_decompose(&[1.0, -1.0], NormSpec::l2());
        let (lhs, rhs) = c.bound_sides(NormSpec::l2());
        assert_eq!(lhs, 2.0);
        assert!((rhs - 2.0).abs() < 1e-15);
    }

    #[test]
    fn segment_examples() {
        let x0 = make_distribution(vec![1.0, 0.0]).unwrap();
        let x1 = make_distribution(vec![0.0, 1.0]).unwrap();
        assert_eq!(segment(&x0, &x1, 0.5).unwrap().weights(), &[0.5, 0.5]);
        assert_eq!(segment(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(segment(&x0, &x1, 1.0).unwrap(), x1);
        assert_eq!(segment(&x0, &x1, 1.5), Err(SimplexError::TOutOfRange(1.5)));
    }

    #[test]
    fn sampling_examples() {
        let s2 = OutcomeSpace::new(2).unwrap();
        for seed in 0..20 {
            let d = sample_distribution(&s2, seed);
            assert!(d.weights()[0] >= 0.0 && d.weights()[0] <= 1.0);
            assert_eq!(d.weights()[0] + d.weights()[1], 1.0);
        }
        assert_eq!(sample_distribution(&s2, 7), sample_distribution(&s2, 7));

        let s3 = OutcomeSpace::new(3).unwrap();
        let mut rng = rng_from_seed(11);
        let mut mean = [0.0; 3];
        let count = 10_000;
        for _ in 0..count {
            let d = sample_uniform(3, &mut rng);
            for (m, w) in mean.iter_mut().zip(d.weights()) {
                *m += w / count as f64;
            }
        }
        for m in mean {
            assert!((m - 1.0 / 3.0).abs() < 0.02, "{mean:?}");
        }
        let _ = s3;
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    fn norm_specs() -> impl Strategy<Value = NormSpec> {
        prop_oneof![Just(NormSpec::l1()), Just(NormSpec::l2()), Just(NormSpec::linf())]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn normalized_has_unit_dual_norm(
            z in prop::collection::vec(-10.0f64..10.0, 2..7),
            spec in norm_specs(),
        ) {
            prop_assume!(z.iter().any(|v| v.abs() > 1e-6));
            let u = normalize_dual(&z, spec).unwrap();
            prop_assert!((dual_norm(&u, spec) - 1.0).abs() <= Tolerances::default().norm);
        }

        #[test]
        fn holder_inequality(
            z in prop::collection::vec(-10.0f64..10.0, 4),
            x in prop::collection::vec(-10.0f64..10.0, 4),
            spec in norm_specs(),
        ) {
            let lhs = dot(&z, &x).abs();
            let rhs = dual_norm(&z, spec) * lp_norm(&x, spec.p());
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn cone_split_reconstructs_and_is_bounded(
            h in prop::collection::vec(-10.0f64..10.0, 2..7),
            spec in prop_oneof![Just(NormSpec::l1()), Just(NormSpec::l2())],
        ) {
            let c = cone_decompose(&h, spec);
            for ((p, n), v) in c.pos.iter().zip(&c.neg).zip(&h) {
                prop_assert_eq!(p - n, *v);
                prop_assert!(*p >= 0.0 && *n >= 0.0);
            }
            let (lhs, rhs) = c.bound_sides(spec);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn samples_are_valid(seed in any::<u64>(), n in 2usize..8) {
            let d = sample_distribution(&OutcomeSpace::new(n).unwrap(), seed);
            let sum: f64 = d.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(d.weights().iter().all(|&v| v >= 0.0));
        }
    }
}
