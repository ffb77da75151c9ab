//! Scoring functions synthesized from a separating family.
//!
//! With `S'(r, .) = -w(r) z_r` the expected score has derivative
//!
//! ```text
//! d/dr E_P S(r, Y) = <S'(r, .), P> = -w(r) <z_r, P>,
//! ```
//!
//! which is negative while `r < Gamma(P)` (there `<z_r, P> > 0`) and positive
//! once `r > Gamma(P)`. The expected score therefore falls until
//! `Gamma(P)` and rises afterwards. `S` itself is the integral of `S'` from a
//! base level `r0`, taken with the composite trapezoid rule on the family grid.

use std::fmt;
use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::family::SeparatingFamily;
use crate::properties::PropertySpec;
use crate::simplex::{self, Distribution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("weight is {value} at level {s}; must be positive")]
    NonpositiveWeight { s: f64, value: f64 },
    #[error("base level {r0} outside the grid [{lo}, {hi}]")]
    BaseLevelOutOfRange { r0: f64, lo: f64, hi: f64 },
    #[error("check needs a grid of at least {needed} levels, got {got}")]
    GridTooSmall { needed: usize, got: usize },
}

/// Positive weight `w(s)` in front of the separating functional.
#[derive(Clone)]
pub enum Weight {
    Constant(f64),
    /// `intercept + slope * s`.
    Affine {
        intercept: f64,
        slope: f64,
    },
    Custom {
        id: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Constant(1.0)
    }
}

impl Weight {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Weight::Constant(c) => *c,
            Weight::Affine { intercept, slope } => intercept + slope * s,
            Weight::Custom { f, .. } => f(s),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Weight::Constant(c) => format!("constant({c})"),
            Weight::Affine { intercept, slope } => format!("affine({intercept} + {slope} s)"),
            Weight::Custom { id, .. } => format!("custom({id})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub levels: Vec<f64>,
    /// `table[k][i] = S(levels[k], omega_i)`.
    pub table: Vec<Vec<f64>>,
    pub node_weights: Vec<f64>,
    pub weight_id: String,
    pub base_level: f64,
    pub base_index: usize,
    pub property: serde_json::Value,
    pub p: f64,
}

/// Integrates the family into a scoring table anchored at the grid node
/// nearest to `r0` (default: middle of the grid range).
pub fn synthesize(fam: &SeparatingFamily, w: &Weight, r0: Option<f64>) -> Result<ScoringRule, ScoringError> {
    let levels = fam.levels.clone();
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    let r0 = r0.unwrap_or(0.5 * (lo + hi));
    if !(r0 >= lo && r0 <= hi) {
        return Err(ScoringError::BaseLevelOutOfRange { r0, lo, hi });
    }
    let node_weights: Vec<f64> = levels.iter().map(|&s| w.eval(s)).collect();
    for (&s, &value) in levels.iter().zip(&node_weights) {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ScoringError::NonpositiveWeight { s, value });
        }
    }
    let base_index = nearest_node(&levels, r0);
    let n = fam.property().dim();

    let integrand: Vec<Vec<f64>> = fam
        .functionals
        .iter()
        .zip(&node_weights)
        .map(|(f, wk)| f.z.iter().map(|z| wk * z).collect())
        .collect();
    let mut cumulative = vec![vec![0.0; n]; levels.len()];
    for k in 1..levels.len() {
        let h = levels[k] - levels[k - 1];
        for i in 0..n {
            cumulative[k][i] = cumulative[k - 1][i] + 0.5 * h * (integrand[k - 1][i] + integrand[k][i]);
        }
    }
    let base = cumulative[base_index].clone();
    let table = cumulative
        .iter()
        .map(|row| row.iter().zip(&base).map(|(c, b)| -(c - b)).collect())
        .collect();
    Ok(ScoringRule {
        levels,
        table,
        node_weights,
        weight_id: w.id(),
        base_level: fam.levels[base_index],
        base_index,
        property: fam.property().to_json(),
        p: fam.norm.p(),
    })
}

fn nearest_node(levels: &[f64], r: f64) -> usize {
    let mut best = 0;
    for (k, &l) in levels.iter().enumerate() {
        if (l - r).abs() < (levels[best] - r).abs() {
            best = k;
        }
    }
    best
}

impl ScoringRule {
    pub fn step(&self) -> f64 {
        (self.levels[self.levels.len() - 1] - self.levels[0]) / (self.levels.len() - 1) as f64
    }

    fn expected_at(&self, p: &Distribution, k: usize) -> f64 {
        simplex::dot(&self.table[k], p.weights())
    }

    /// Grid node minimizing the expected score under `p`.
    pub fn argmin(&self, p: &Distribution) -> usize {
        let mut best = 0;
        let mut best_v = f64::INFINITY;
        for k in 0..self.levels.len() {
            let v = self.expected_at(p, k);
            if v < best_v {
                best_v = v;
                best = k;
            }
        }
        best
    }

    /// CSV with header `r,S_omega_1..S_omega_n`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let n = self.table.first().map_or(0, |r| r.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["r".to_string()];
        header.extend((1..=n).map(|i| format!("S_omega_{i}")));
        w.write_record(&header)?;
        for (r, row) in self.levels.iter().zip(&self.table) {
            let mut rec = vec![crate::fmt17(*r)];
            rec.extend(row.iter().map(|v| crate::fmt17(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `E_P S(r, Y)` at the grid node nearest to `r`.
pub fn expected_score(rule: &ScoringRule, p: &Distribution, r: f64) -> f64 {
    rule.expected_at(p, nearest_node(&rule.levels, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFailure {
    pub p: Vec<f64>,
    pub gamma: f64,
    pub argmin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub trials: usize,
    pub matches: usize,
    pub max_level_error: f64,
    pub grid_step: f64,
    pub tolerance_steps: f64,
    pub failures: Vec<ConsistencyFailure>,
}

impl ConsistencyReport {
    pub fn all_match(&self) -> bool {
        self.trials > 0 && self.matches == self.trials
    }
}

/// Grid-argmin tolerance in units of the grid step.
pub const CONSISTENCY_STEPS: f64 = 1.5;

/// Draws distributions whose property value sits at least
/// [`CONSISTENCY_STEPS`] grid steps inside the grid and checks that the
/// grid argmin of the expected score lands within that many steps of it.
pub fn consistency_check(
    rule: &ScoringRule,
    prop: &PropertySpec,
    trials: usize,
    seed: u64,
) -> ConsistencyReport {
    let step = rule.step();
    let band = CONSISTENCY_STEPS * step;
    let lo = rule.levels[0] + band;
    let hi = rule.levels[rule.levels.len() - 1] - band;
    let mut rng = simplex::rng_from_seed(seed);
    let mut report = ConsistencyReport {
        trials: 0,
        matches: 0,
        max_level_error: 0.0,
        grid_step: step,
        tolerance_steps: CONSISTENCY_STEPS,
        failures: Vec::new(),
    };
    let mut attempts = 0;
    while report.trials < trials && attempts < 1000 * trials.max(1) {
        attempts += 1;
        let p = simplex::sample_uniform(prop.dim(), &mut rng);
        let gamma = prop.eval(&p);
        if !(gamma >= lo && gamma <= hi) {
            continue;
        }
        report.trials += 1;
        let argmin = rule.levels[rule.argmin(&p)];
        let err = (argmin - gamma).abs();
        report.max_level_error = report.max_level_error.max(err);
        if err <= band {
            report.matches += 1;
        } else {
            report.failures.push(ConsistencyFailure {
                p: p.into_weights(),
                gamma,
                argmin,
            });
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderReport {
    pub trials: usize,
    pub grid_size: usize,
    /// Worst `|finite difference - (-w <z, P>)|`, relative to the largest
    /// `|w <z, P>|` on the grid for the same `P`.
    pub max_relative_error: f64,
    pub pass: bool,
}

pub const FIRST_ORDER_TOLERANCE: f64 = 1e-2;

/// Central differences of `r -> E_P S(r, Y)` against `-w(r) <z_r, P>` at
/// interior nodes.
pub fn first_order_check(
    rule: &ScoringRule,
    fam: &SeparatingFamily,
    prop: &PropertySpec,
    trials: usize,
    seed: u64,
) -> Result<FirstOrderReport, ScoringError> {
    let size = rule.levels.len();
    if size < 5 {
        return Err(ScoringError::GridTooSmall { needed: 5, got: size });
    }
    let abs_floor = fam.config().tol.res;
    let mut rng = simplex::rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = simplex::sample_uniform(prop.dim(), &mut rng);
        worst = worst.max(first_order_error(rule, fam, &p, abs_floor));
    }
    Ok(FirstOrderReport {
        trials,
        grid_size: size,
        max_relative_error: worst,
        pass: worst <= FIRST_ORDER_TOLERANCE,
    })
}

/// Relative first-order error for one distribution; falls back to an
/// absolute comparison when the derivative vanishes on the whole grid.
pub fn first_order_error(
    rule: &ScoringRule,
    fam: &SeparatingFamily,
    p: &Distribution,
    abs_floor: f64,
) -> f64 {
    let size = rule.levels.len();
    let derivative: Vec<f64> = fam
        .functionals
        .iter()
        .zip(&rule.node_weights)
        .map(|(f, w)| -w * f.apply(p))
        .collect();
    let scale = derivative.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut err = 0.0f64;
    for (k, d) in derivative.iter().enumerate().take(size - 1).skip(1) {
        let fd = (rule.expected_at(p, k + 1) - rule.expected_at(p, k - 1))
            / (rule.levels[k + 1] - rule.levels[k - 1]);
        err = err.max((fd - d).abs());
    }
    if scale <= abs_floor {
        err
    } else {
        err / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::build_family;
    use crate::separator::SeparatorConfig;
    use crate::simplex::make_distribution;

    fn mean_family(grid: usize) -> (PropertySpec, SeparatingFamily) {
        let p = PropertySpec::mean(vec![0.0, 1.0]).unwrap();
        let fam = build_family(&p, grid, &SeparatorConfig::default()).unwrap();
        (p, fam)
    }

    #[test]
    fn anchoring_and_scaling() {
        let (_, fam) = mean_family(9);
        let rule = synthesize(&fam, &Weight::Constant(1.0), None).unwrap();
        assert_eq!(rule.base_index, 4);
        assert!(rule.table[rule.base_index].iter().all(|&v| v == 0.0));

        let doubled = synthesize(&fam, &Weight::Constant(2.0), None).unwrap();
        for (a, b) in rule.table.iter().zip(&doubled.table) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(2.0 * x, *y);
            }
        }

        let p = make_distribution(vec![0.3, 0.7]).unwrap();
        assert_eq!(expected_score(&rule, &p, rule.base_level), 0.0);
        let vertex = make_distribution(vec![0.0, 1.0]).unwrap();
        assert_eq!(expected_score(&rule, &vertex, rule.levels[2]), rule.table[2][1]);
    }

    #[test]
    fn outcome_one_score_decreases() {
        // z_r(omega_2) > 0 for every interior level, so S(., omega_2) falls.
        let (_, fam) = mean_family(9);
        let rule = synthesize(&fam, &Weight::default(), None).unwrap();
        for w in rule.table.windows(2) {
            assert!(w[1][1] < w[0][1]);
            assert!(w[1][0] > w[0][0]);
        }
    }

    #[test]
    fn synthesis_errors() {
        let (_, fam) = mean_family(5);
        assert!(matches!(
            synthesize(&fam, &Weight::Constant(0.0), None),
            Err(ScoringError::NonpositiveWeight { .. })
        ));
        assert!(matches!(
            synthesize(&fam, &Weight::default(), Some(2.0)),
            Err(ScoringError::BaseLevelOutOfRange { .. })
        ));
    }

    #[test]
    fn argmin_tracks_mean() {
        let (p, fam) = mean_family(64);
        let rule = synthesize(&fam, &Weight::default(), None).unwrap();
        let d = make_distribution(vec![0.25, 0.75]).unwrap();
        let k = rule.argmin(&d);
        // Grid oracle: the node nearest to 0.75 or its neighbour.
        let nearest = nearest_node(&rule.levels, 0.75);
        assert!(k.abs_diff(nearest) <= 1, "{k} vs {nearest}");

        let rep = consistency_check(&rule, &p, 100, 3);
        assert_eq!((rep.trials, rep.matches), (100, 100));

        let flipped = synthesize(&fam.negated(), &Weight::default(), None).unwrap();
        let rep = consistency_check(&flipped, &p, 100, 3);
        assert_eq!(rep.matches, 0);
    }

    #[test]
    fn weight_change_keeps_argmin() {
        let (p, fam) = mean_family(64);
        let a = synthesize(&fam, &Weight::default(), None).unwrap();
        let b = synthesize(
            &fam,
            &Weight::Affine {
                intercept: 1.0,
                slope: 1.0,
            },
            None,
        )
        .unwrap();
        let mut rng = simplex::rng_from_seed(4);
        for _ in 0..200 {
            let d = simplex::sample_uniform(p.dim(), &mut rng);
            assert_eq!(a.argmin(&d), b.argmin(&d));
        }
    }

    #[test]
    fn first_order_examples() {
        let (p, fam) = mean_family(128);
        let rule = synthesize(&fam, &Weight::default(), None).unwrap();
        let rep = first_order_check(&rule, &fam, &p, 50, 1).unwrap();
        assert!(rep.pass, "{rep:?}");

        let rule = synthesize(
            &fam,
            &Weight::Affine {
                intercept: 1.0,
                slope: 1.0,
            },
            None,
        )
        .unwrap();
        assert!(first_order_check(&rule, &fam, &p, 50, 1).unwrap().pass);

        let (p5, fam5) = mean_family(4);
        let rule5 = synthesize(&fam5, &Weight::default(), None).unwrap();
        assert!(matches!(
            first_order_check(&rule5, &fam5, &p5, 1, 1),
            Err(ScoringError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn expected_score_is_affine_in_p() {
        let (_, fam) = mean_family(16);
        let rule = synthesize(&fam, &Weight::default(), None).unwrap();
        let a = make_distribution(vec![0.1, 0.9]).unwrap();
        let b = make_distribution(vec![0.8, 0.2]).unwrap();
        for t in [0.0, 0.25, 0.5, 0.9] {
            let m = simplex::segment(&a, &b, t).unwrap();
            for &r in &rule.levels {
                let lhs = expected_score(&rule, &m, r);
                let rhs = (1.0 - t) * expected_score(&rule, &a, r) + t * expected_score(&rule, &b, r);
                assert!((lhs - rhs).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let (_, fam) = mean_family(3);
        let rule = synthesize(&fam, &Weight::default(), None).unwrap();
        let mut buf = Vec::new();
        rule.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,S_omega_1,S_omega_2\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
