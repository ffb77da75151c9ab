//! Sampled checks of the structural conditions a property needs for a
//! separating family: monotonicity along segments, convex level sets,
//! strictness on the interior pre-image, local non-constancy and
//! continuity.
//!
//! A failed check always carries a witness that [`replay_witness`] can
//! re-verify from the stored points alone. Passing verdicts only claim that
//! no counterexample was found on the evaluated points, except for the
//! built-ins whose linear structure settles the question.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::properties::PropertySpec;
use crate::separator::{self, draw_straddling_pair, level_cross, SeparationError};
use crate::simplex::{self, draw_probe, lp_norm, mix, Distribution, NormSpec};
use crate::tolerance::Tolerances;

pub const DEFAULT_GRID: usize = 17;
pub const DEFAULT_TRIALS: usize = 200;
pub const CONTINUITY_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const G2_PROBES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    SegmentMonotone,
    LevelConvex,
    StrictOnB0,
    G2LocallyNonConstant,
    Continuity,
    SignStructure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Guarantee {
    Exact,
    Sampled,
}

/// Points and values refuting a condition. The layout of `points` and
/// `params` depends on the condition; see [`replay_witness`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub points: Vec<Vec<f64>>,
    pub params: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: Option<u64>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub condition: Condition,
    pub verdict: Verdict,
    pub guarantee: Guarantee,
    pub witness: Option<Witness>,
    pub trials: usize,
    pub config: serde_json::Value,
    pub observed: Option<Vec<f64>>,
    pub note: Option<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    fn from_outcome(
        condition: Condition,
        prop: &PropertySpec,
        witness: Option<Witness>,
        trials: usize,
        config: serde_json::Value,
    ) -> Self {
        let exact = prop.has_exact_guarantee()
            && matches!(
                condition,
                Condition::SegmentMonotone | Condition::LevelConvex | Condition::StrictOnB0
            );
        Self {
            condition,
            verdict: if witness.is_some() {
                Verdict::Fail
            } else {
                Verdict::Pass
            },
            guarantee: if exact {
                Guarantee::Exact
            } else {
                Guarantee::Sampled
            },
            witness,
            trials,
            config,
            observed: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error("grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),
    #[error("point is at level {value}, not {r}")]
    NotOnLevel { r: f64, value: f64 },
    #[error("eps must be positive, got {0}")]
    BadRadius(f64),
    #[error(transparent)]
    Separation(#[from] SeparationError),
}

fn grid_values(
    prop: &PropertySpec,
    x0: &Distribution,
    x1: &Distribution,
    m: usize,
    tol: &Tolerances,
) -> (Vec<f64>, Vec<Distribution>) {
    let pts: Vec<Distribution> = (0..m)
        .map(|k| mix(x0, x1, k as f64 / (m - 1) as f64, tol.sum))
        .collect();
    (pts.iter().map(|p| prop.eval(p)).collect(), pts)
}

/// First triple `i < j < k` whose middle value escapes `[min, max]` of the
/// outer two by more than `tau`.
fn find_extremum_triple(g: &[f64], tau: f64) -> Option<(usize, usize, usize)> {
    let m = g.len();
    let mut pre_min = vec![0usize; m];
    let mut pre_max = vec![0usize; m];
    for j in 1..m {
        pre_min[j] = if g[j - 1] < g[pre_min[j - 1]] {
            j - 1
        } else {
            pre_min[j - 1]
        };
        pre_max[j] = if g[j - 1] > g[pre_max[j - 1]] {
            j - 1
        } else {
            pre_max[j - 1]
        };
    }
    let mut suf_min = vec![m - 1; m];
    let mut suf_max = vec![m - 1; m];
    for j in (0..m - 1).rev() {
        suf_min[j] = if g[j + 1] < g[suf_min[j + 1]] {
            j + 1
        } else {
            suf_min[j + 1]
        };
        suf_max[j] = if g[j + 1] > g[suf_max[j + 1]] {
            j + 1
        } else {
            suf_max[j + 1]
        };
    }
    (1..m - 1).find_map(|j| {
        let (i, k) = (pre_min[j], suf_min[j]);
        if g[i] < g[j] - tau && g[k] < g[j] - tau {
            return Some((i, j, k));
        }
        let (i, k) = (pre_max[j], suf_max[j]);
        if g[i] > g[j] + tau && g[k] > g[j] + tau {
            return Some((i, j, k));
        }
        None
    })
}

fn triple_witness(
    g: &[f64],
    pts: &[Distribution],
    (i, j, k): (usize, usize, usize),
    m: usize,
    what: &str,
) -> Witness {
    let t = |idx: usize| idx as f64 / (m - 1) as f64;
    Witness {
        points: vec![
            pts[i].weights().to_vec(),
            pts[j].weights().to_vec(),
            pts[k].weights().to_vec(),
        ],
        params: vec![t(i), t(j), t(k)],
        values: vec![g[i], g[j], g[k]],
        seed: None,
        description: format!(
            "{what}: Gamma = ({:e}, {:e}, {:e}) at t = ({}, {}, {}); the middle point lies on the segment between the outer two",
            g[i], g[j], g[k], t(i), t(j), t(k)
        ),
    }
}

fn segment_violation(
    prop: &PropertySpec,
    x0: &Distribution,
    x1: &Distribution,
    m: usize,
    tol: &Tolerances,
) -> Option<Witness> {
    let (g, pts) = grid_values(prop, x0, x1, m, tol);
    find_extremum_triple(&g, tol.level)
        .map(|idx| triple_witness(&g, &pts, idx, m, "strict interior extremum along segment"))
}

pub fn check_segment_monotone(
    prop: &PropertySpec,
    x0: &Distribution,
    x1: &Distribution,
    m: usize,
    tol: &Tolerances,
) -> Result<CheckReport, CheckError> {
    if m < 3 {
        return Err(CheckError::GridTooSmall(m));
    }
    let w = segment_violation(prop, x0, x1, m, tol);
    Ok(CheckReport::from_outcome(
        Condition::SegmentMonotone,
        prop,
        w,
        1,
        serde_json::json!({ "m": m }),
    ))
}

fn random_segment(n: usize, seed: u64) -> (Distribution, Distribution) {
    let mut rng = simplex::rng_from_seed(seed);
    (draw_probe(n, &mut rng), draw_probe(n, &mut rng))
}

/// Runs `per_trial` on derived seeds in parallel and keeps the first
/// failure by trial index, so the result does not depend on scheduling.
fn first_failure<F>(trials: usize, seed: u64, per_trial: F) -> Option<Witness>
where
    F: Fn(u64) -> Option<Witness> + Sync,
{
    let results: Vec<Option<Witness>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let s = simplex::derive_seed(seed, k);
            per_trial(s).map(|mut w| {
                w.seed = Some(s);
                w
            })
        })
        .collect();
    results.into_iter().flatten().next()
}

pub fn check_quasi_monotone(
    prop: &PropertySpec,
    trials: usize,
    m: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport, CheckError> {
    if m < 3 {
        return Err(CheckError::GridTooSmall(m));
    }
    let n = prop.dim();
    let w = first_failure(trials, seed, |s| {
        let (x0, x1) = random_segment(n, s);
        segment_violation(prop, &x0, &x1, m, tol)
    });
    Ok(CheckReport::from_outcome(
        Condition::SegmentMonotone,
        prop,
        w,
        trials,
        serde_json::json!({ "m": m, "trials": trials, "seed": seed }),
    ))
}

/// Plateau inside the interior pre-image on a segment whose values differ.
fn strictness_violation(
    prop: &PropertySpec,
    x0: &Distribution,
    x1: &Distribution,
    m: usize,
    tol: &Tolerances,
) -> Option<Witness> {
    let interval = prop.image_interval().ok()?;
    let (g, pts) = grid_values(prop, x0, x1, m, tol);
    let inside = |v: f64| v > interval.lo + tol.level && v < interval.hi - tol.level;
    let total = (g[m - 1] - g[0]).abs();
    // Segments nearly inside one level set carry no strictness information
    // at grid resolution.
    if total <= 1e3 * (m - 1) as f64 * tol.level {
        return None;
    }
    for j in 0..m - 1 {
        if (g[j + 1] - g[j]).abs() > tol.level || !inside(g[j]) || !inside(g[j + 1]) {
            continue;
        }
        let triple = if (g[m - 1] - g[j]).abs() > tol.level && inside(g[m - 1]) && j + 1 < m - 1 {
            (j, j + 1, m - 1)
        } else if (g[0] - g[j + 1]).abs() > tol.level && inside(g[0]) && j > 0 {
            (0, j, j + 1)
        } else {
            continue;
        };
        return Some(triple_witness(
            &g,
            &pts,
            triple,
            m,
            "level plateau between points of different levels",
        ));
    }
    None
}

/// Strict quasi-monotonicity restricted to points whose level lies in the
/// open interior of the image.
pub fn check_strict_quasi_monotone(
    prop: &PropertySpec,
    trials: usize,
    m: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport, CheckError> {
    if m < 3 {
        return Err(CheckError::GridTooSmall(m));
    }
    let n = prop.dim();
    let w = first_failure(trials, seed, |s| {
        let (x0, x1) = random_segment(n, s);
        strictness_violation(prop, &x0, &x1, m, tol)
    });
    Ok(CheckReport::from_outcome(
        Condition::StrictOnB0,
        prop,
        w,
        trials,
        serde_json::json!({ "m": m, "trials": trials, "seed": seed }),
    ))
}

pub fn check_level_convexity(
    prop: &PropertySpec,
    r: f64,
    pairs: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<CheckReport, CheckError> {
    separator::accepted_interval(prop, r, tol)?;
    let budget = separator::DEFAULT_DRAW_BUDGET.max(4 * pairs);
    let mut rng = simplex::rng_from_seed(seed);
    let mut draws = 0;
    let mut next_point = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Distribution, CheckError> {
        let (lo, hi) = draw_straddling_pair(prop, r, tol, rng, &mut draws, budget).ok_or(
            SeparationError::InsufficientSpan {
                r,
                rank: 0,
                needed: 1,
                draws: budget,
            },
        )?;
        Ok(level_cross(prop, &lo, &hi, r, tol)?)
    };
    let mut witness = None;
    let mut done = 0;
    for _ in 0..pairs {
        let a = next_point(&mut rng)?;
        let b = next_point(&mut rng)?;
        done += 1;
        let mid = mix(&a, &b, 0.5, tol.sum);
        let v = prop.eval(&mid);
        if (v - r).abs() > tol.level {
            witness = Some(Witness {
                points: vec![a.weights().to_vec(), b.weights().to_vec(), mid.weights().to_vec()],
                params: vec![r],
                values: vec![prop.eval(&a), prop.eval(&b), v],
                seed: Some(seed),
                description: format!(
                    "two points of the level set {{Gamma = {r}}} whose midpoint has Gamma = {v:e}"
                ),
            });
            break;
        }
    }
    Ok(CheckReport::from_outcome(
        Condition::LevelConvex,
        prop,
        witness,
        done,
        serde_json::json!({ "r": r, "pairs": pairs, "seed": seed }),
    ))
}

/// Searches the `eps`-ball (in `l_p`) around `x` for points strictly below
/// and strictly above the level of `x`.
pub fn check_g2(
    prop: &PropertySpec,
    r: f64,
    x: &Distribution,
    eps: f64,
    seed: u64,
    norm: NormSpec,
    tol: &Tolerances,
) -> Result<CheckReport, CheckError> {
    if !(eps > 0.0) {
        return Err(CheckError::BadRadius(eps));
    }
    let gx = prop.eval(x);
    if (gx - r).abs() > tol.level {
        return Err(CheckError::NotOnLevel { r, value: gx });
    }
    let n = prop.dim();
    let mut rng = simplex::rng_from_seed(seed);
    let space = prop.space();
    let targets = (0..n)
        .map(|i| space.vertex(i))
        .chain((0..G2_PROBES).map(|_| draw_probe(n, &mut rng)))
        .collect::<Vec<_>>();
    let mut lowest = (gx, x.clone());
    let mut highest = (gx, x.clone());
    let mut probes = 0;
    'outer: for y in &targets {
        let diff: Vec<f64> = y.weights().iter().zip(x.weights()).map(|(a, b)| a - b).collect();
        let dist = lp_norm(&diff, norm.p());
        if dist == 0.0 {
            continue;
        }
        let s = (eps / dist).min(1.0);
        for scale in [1.0, 0.5, 0.1] {
            probes += 1;
            let xp = mix(x, y, s * scale, tol.sum);
            let v = prop.eval(&xp);
            if v < lowest.0 {
                lowest = (v, xp);
            } else if v > highest.0 {
                highest = (v, xp);
            }
            if lowest.0 < r - tol.level && highest.0 > r + tol.level {
                break 'outer;
            }
        }
    }
    let found_low = lowest.0 < r - tol.level;
    let found_high = highest.0 > r + tol.level;
    let witness = (!(found_low && found_high)).then(|| Witness {
        points: vec![
            x.weights().to_vec(),
            lowest.1.weights().to_vec(),
            highest.1.weights().to_vec(),
        ],
        params: vec![r, eps, norm.p()],
        values: vec![gx, lowest.0, highest.0],
        seed: Some(seed),
        description: format!(
            "{probes} probes within distance {eps} of a level-{r} point found no value {}; extremes observed {:e} and {:e}",
            match (found_low, found_high) {
                (false, false) => "below or above",
                (false, true) => "below",
                _ => "above",
            },
            lowest.0,
            highest.0
        ),
    });
    let mut report = CheckReport::from_outcome(
        Condition::G2LocallyNonConstant,
        prop,
        witness,
        probes,
        serde_json::json!({ "r": r, "eps": eps, "seed": seed, "p": norm.p() }),
    );
    if norm.p() != 1.0 {
        report.note = Some(format!(
            "neighbourhood measured in the ambient l_{} norm",
            norm.p()
        ));
    }
    Ok(report)
}

/// Differences `|Gamma(a) - Gamma(b)|` over shrinking sub-segments of a
/// random segment, always keeping the half with the larger change; one entry
/// per `deltas` element, with the pair that realized it.
fn continuity_trace(
    prop: &PropertySpec,
    x0: Distribution,
    x1: Distribution,
    deltas: &[f64],
    norm: NormSpec,
    tol: &Tolerances,
) -> Vec<(f64, Distribution, Distribution)> {
    let (mut a, mut b) = (x0, x1);
    let (mut ga, mut gb) = (prop.eval(&a), prop.eval(&b));
    let mut out = Vec::with_capacity(deltas.len());
    let dist = |a: &Distribution, b: &Distribution| {
        let d: Vec<f64> = a.weights().iter().zip(b.weights()).map(|(x, y)| x - y).collect();
        lp_norm(&d, norm.p())
    };
    for &delta in deltas {
        let mut guard = 0;
        while dist(&a, &b) > delta && guard < 200 {
            guard += 1;
            let m = mix(&a, &b, 0.5, tol.sum);
            let gm = prop.eval(&m);
            if (gm - ga).abs() >= (gb - gm).abs() {
                b = m;
                gb = gm;
            } else {
                a = m;
                ga = gm;
            }
        }
        out.push(((gb - ga).abs(), a.clone(), b.clone()));
    }
    out
}

/// Empirical modulus of continuity at `delta` in {1e-2, 1e-3, 1e-4}; passes
/// when each decade at least halves the modulus (or it drops below the
/// level tolerance).
pub fn check_continuity(
    prop: &PropertySpec,
    trials: usize,
    seed: u64,
    norm: NormSpec,
    tol: &Tolerances,
) -> CheckReport {
    let n = prop.dim();
    let traces: Vec<Vec<(f64, Distribution, Distribution)>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let (x0, x1) = random_segment(n, simplex::derive_seed(seed, k));
            continuity_trace(prop, x0, x1, &CONTINUITY_DELTAS, norm, tol)
        })
        .collect();
    let mut moduli = vec![0.0f64; CONTINUITY_DELTAS.len()];
    let mut argmax = vec![0usize; CONTINUITY_DELTAS.len()];
    for (k, trace) in traces.iter().enumerate() {
        for (d, (diff, _, _)) in trace.iter().enumerate() {
            if *diff > moduli[d] {
                moduli[d] = *diff;
                argmax[d] = k;
            }
        }
    }
    let mut witness = None;
    for d in 1..moduli.len() {
        let threshold = 0.5 * moduli[d - 1];
        if moduli[d] > threshold && moduli[d] > tol.level {
            let (diff, a, b) = &traces[argmax[d]][d];
            witness = Some(Witness {
                points: vec![a.weights().to_vec(), b.weights().to_vec()],
                params: vec![CONTINUITY_DELTAS[d], threshold.max(tol.level), norm.p()],
                values: vec![prop.eval(a), prop.eval(b)],
                seed: Some(simplex::derive_seed(seed, argmax[d] as u64)),
                description: format!(
                    "points within distance {} differ by {diff:e}; modulus did not halve from {:e}",
                    CONTINUITY_DELTAS[d],
                    moduli[d - 1]
                ),
            });
            break;
        }
    }
    let mut report = CheckReport::from_outcome(
        Condition::Continuity,
        prop,
        witness,
        trials,
        serde_json::json!({ "trials": trials, "seed": seed, "p": norm.p(), "deltas": CONTINUITY_DELTAS }),
    );
    report.observed = Some(moduli);
    report
}

/// Re-evaluates `prop` at the witness points and reports whether the
/// recorded violation of `condition` still holds.
pub fn replay_witness(prop: &PropertySpec, condition: Condition, w: &Witness, tol: &Tolerances) -> bool {
    let n = prop.dim();
    let mut pts = Vec::with_capacity(w.points.len());
    for p in &w.points {
        match simplex::make_distribution_with(p.clone(), tol.sum) {
            Ok(d) if d.dim() == n => pts.push(d),
            _ => return false,
        }
    }
    let g: Vec<f64> = pts.iter().map(|p| prop.eval(p)).collect();
    let on_segment = |a: &Distribution, mid: &Distribution, b: &Distribution, s: f64| {
        let expected = mix(a, b, s, tol.sum);
        expected
            .weights()
            .iter()
            .zip(mid.weights())
            .all(|(x, y)| (x - y).abs() <= 1e-12)
    };
    match condition {
        Condition::SegmentMonotone => {
            if pts.len() != 3 || w.params.len() != 3 {
                return false;
            }
            let s = (w.params[1] - w.params[0]) / (w.params[2] - w.params[0]);
            on_segment(&pts[0], &pts[1], &pts[2], s)
                && (g[1] > g[0].max(g[2]) + tol.level || g[1] < g[0].min(g[2]) - tol.level)
        }
        Condition::StrictOnB0 => {
            if pts.len() != 3 || w.params.len() != 3 {
                return false;
            }
            let Ok(interval) = prop.image_interval() else {
                return false;
            };
            let inside = |v: f64| v > interval.lo + tol.level && v < interval.hi - tol.level;
            let s = (w.params[1] - w.params[0]) / (w.params[2] - w.params[0]);
            let (lo, hi) = (g[0].min(g[2]), g[0].max(g[2]));
            on_segment(&pts[0], &pts[1], &pts[2], s)
                && g.iter().all(|&v| inside(v))
                && hi - lo > tol.level
                && (g[1] >= hi - tol.level || g[1] <= lo + tol.level)
        }
        Condition::LevelConvex => {
            if pts.len() != 3 || w.params.is_empty() {
                return false;
            }
            let r = w.params[0];
            on_segment(&pts[0], &pts[2], &pts[1], 0.5)
                && (g[0] - r).abs() <= tol.level
                && (g[1] - r).abs() <= tol.level
                && (g[2] - r).abs() > tol.level
        }
        Condition::G2LocallyNonConstant => {
            let (Some(seed), [r, eps, p]) = (w.seed, w.params.as_slice()) else {
                return false;
            };
            let Ok(norm) = NormSpec::new(*p) else {
                return false;
            };
            matches!(
                check_g2(prop, *r, &pts[0], *eps, seed, norm, tol),
                Ok(rep) if rep.verdict == Verdict::Fail
            )
        }
        Condition::Continuity => {
            let [delta, threshold, p] = w.params.as_slice() else {
                return false;
            };
            if pts.len() != 2 {
                return false;
            }
            let d: Vec<f64> = pts[0]
                .weights()
                .iter()
                .zip(pts[1].weights())
                .map(|(a, b)| a - b)
                .collect();
            lp_norm(&d, *p) <= delta * (1.0 + 1e-9) && (g[0] - g[1]).abs() > *threshold
        }
        Condition::SignStructure => {
            if pts.len() != 1 || w.params.len() != n + 1 {
                return false;
            }
            let r = w.params[0];
            let s = simplex::dot(&w.params[1..], pts[0].weights());
            let gap = g[0] - r;
            gap.abs() > tol.level && !((s > 0.0) == (gap > 0.0) && s != 0.0)
        }
    }
}

/// Convenience for randomized G2 checks: random points whose level lies in
/// the trimmed interior, each checked as its own level.
pub fn check_g2_sampled(
    prop: &PropertySpec,
    points: usize,
    eps: f64,
    seed: u64,
    norm: NormSpec,
    tol: &Tolerances,
) -> Result<CheckReport, CheckError> {
    let interval = prop.image_interval().map_err(SeparationError::from)?;
    let (lo, hi) = interval.trimmed(tol.margin);
    let mut rng = simplex::rng_from_seed(seed);
    let mut checked = 0;
    let mut attempts = 0;
    let mut last = None;
    while checked < points && attempts < 100 * points {
        attempts += 1;
        let x = simplex::sample_uniform(prop.dim(), &mut rng);
        let r = prop.eval(&x);
        if !(r >= lo && r <= hi) {
            continue;
        }
        checked += 1;
        let rep = check_g2(prop, r, &x, eps, rng.gen(), norm, tol)?;
        if rep.verdict == Verdict::Fail {
            return Ok(rep);
        }
        last = Some(rep);
    }
    let mut rep = last.unwrap_or_else(|| {
        CheckReport::from_outcome(
            Condition::G2LocallyNonConstant,
            prop,
            None,
            0,
            serde_json::Value::Null,
        )
    });
    rep.trials = checked;
    rep.config = serde_json::json!({ "points": points, "eps": eps, "seed": seed, "p": norm.p() });
    if checked == 0 {
        rep.note = Some("no sampled point had a level in the trimmed interior".into());
    }
    Ok(rep)
}
