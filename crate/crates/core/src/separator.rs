//! Normalized separating functionals.
//!
//! For a level `r` the separating functional `z_r` is recovered from the
//! level set alone: sample `{Gamma = r}` by bisection along straddling
//! segments, take the one-dimensional null space of the stacked samples
//! (every sample has coordinate sum one, so the null space already encodes
//! the affine constraint), then orient `z_r` positive on `{Gamma > r}` and
//! scale it to unit dual norm.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::properties::{ImageInterval, PropertyError, PropertySpec};
use crate::quasimono::{CheckReport, Condition, Guarantee, Verdict, Witness};
use crate::simplex::{self, draw_probe, mix, Distribution, NormSpec, SimplexError};
use crate::tolerance::Tolerances;

pub const MAX_BISECTION_STEPS: usize = 200;
pub const DEFAULT_DRAW_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeparationError {
    #[error("pair does not straddle level {r}: values {low} and {high}")]
    NotStraddling { r: f64, low: f64, high: f64 },
    #[error("bisection for level {r} stalled at value {closest} (continuity / G1* failure)")]
    NoConvergence { r: f64, closest: f64, point: Vec<f64> },
    #[error("level {r} outside the accepted interior [{lo}, {hi}]")]
    LevelOutOfRange { r: f64, lo: f64, hi: f64 },
    #[error("level set at {r} spans rank {rank} < {needed} after {draws} draws (G2 / strictness failure)")]
    InsufficientSpan {
        r: f64,
        rank: usize,
        needed: usize,
        draws: usize,
    },
    #[error("level samples leave a {nullity}-dimensional null space (separating hyperplane not unique)")]
    RankDeficient { nullity: usize },
    #[error("no point above level {r} found")]
    NoUpperWitness { r: f64 },
    #[error("fitted functional leaves residual {residual} > {limit} on the level set (level set is not a hyperplane slice)")]
    ResidualBreach { r: f64, residual: f64, limit: f64 },
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

impl SeparationError {
    /// Structural condition whose failure this error signals, if any.
    pub fn signaled_condition(&self) -> Option<&'static str> {
        match self {
            SeparationError::NoConvergence { .. } => Some("G1* (continuity)"),
            SeparationError::InsufficientSpan { .. } => Some("G2 (locally non-constant)"),
            SeparationError::RankDeficient { .. } => Some("uniqueness of the separating family"),
            SeparationError::ResidualBreach { .. } => Some("G1 (convex level sets)"),
            _ => None,
        }
    }

    pub fn is_range_error(&self) -> bool {
        matches!(
            self,
            SeparationError::LevelOutOfRange { .. }
                | SeparationError::Property(PropertyError::LevelOutOfRange { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparatorConfig {
    pub norm: NormSpec,
    pub seed: u64,
    /// Level points per level; `None` uses `4 n`.
    pub count: Option<usize>,
    pub draw_budget: usize,
    pub tol: Tolerances,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            norm: NormSpec::default(),
            seed: 0,
            count: None,
            draw_budget: DEFAULT_DRAW_BUDGET,
            tol: Tolerances::default(),
        }
    }
}

impl SeparatorConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_norm(mut self, norm: NormSpec) -> Self {
        self.norm = norm;
        self
    }

    fn level_count(&self, n: usize) -> usize {
        self.count.unwrap_or(4 * n).max(n - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatingFunctional {
    pub r: f64,
    pub z: Vec<f64>,
    pub norm: NormSpec,
    pub residual: f64,
    pub orientation_witness: Distribution,
}

impl SeparatingFunctional {
    pub fn apply(&self, x: &Distribution) -> f64 {
        simplex::dot(&self.z, x.weights())
    }

    /// The same hyperplane with the opposite orientation.
    pub fn flipped(&self) -> Self {
        Self {
            z: self.z.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    pub r: f64,
    pub points: Vec<Distribution>,
    pub spanning_rank: usize,
}

/// Checks `r` against the margin-trimmed interior of the image.
pub fn accepted_interval(
    prop: &PropertySpec,
    r: f64,
    tol: &Tolerances,
) -> Result<ImageInterval, SeparationError> {
    let interval = prop.image_interval()?;
    let (lo, hi) = interval.trimmed(tol.margin);
    let slack = 1e-12 * interval.width();
    if !(r >= lo - slack && r <= hi + slack) {
        return Err(SeparationError::LevelOutOfRange { r, lo, hi });
    }
    Ok(interval)
}

/// Point on the segment `[x_minus, x_plus]` at level `r`, by bisection.
pub fn level_cross(
    prop: &PropertySpec,
    x_minus: &Distribution,
    x_plus: &Distribution,
    r: f64,
    tol: &Tolerances,
) -> Result<Distribution, SeparationError> {
    let low = prop.eval(x_minus);
    let high = prop.eval(x_plus);
    if !(low < r && r < high) {
        return Err(SeparationError::NotStraddling { r, low, high });
    }
    let (mut t_lo, mut t_hi) = (0.0f64, 1.0f64);
    let (mut v_lo, mut v_hi) = (low, high);
    for _ in 0..MAX_BISECTION_STEPS {
        let t = 0.5 * (t_lo + t_hi);
        if t <= t_lo || t >= t_hi {
            break;
        }
        let x = mix(x_minus, x_plus, t, tol.sum);
        let v = prop.eval(&x);
        if v < r {
            t_lo = t;
            v_lo = v;
        } else if v > r {
            t_hi = t;
            v_hi = v;
        } else {
            return Ok(x);
        }
    }
    let (t, v) = if (v_lo - r).abs() <= (v_hi - r).abs() {
        (t_lo, v_lo)
    } else {
        (t_hi, v_hi)
    };
    let x = mix(x_minus, x_plus, t, tol.sum);
    if (v - r).abs() <= tol.level {
        Ok(x)
    } else {
        Err(SeparationError::NoConvergence {
            r,
            closest: v,
            point: x.into_weights(),
        })
    }
}

/// Draws probe pairs until one straddles `r`; `None` once `budget` draws
/// have been spent.
pub(crate) fn draw_straddling_pair<R: Rng + ?Sized>(
    prop: &PropertySpec,
    r: f64,
    tol: &Tolerances,
    rng: &mut R,
    draws: &mut usize,
    budget: usize,
) -> Option<(Distribution, Distribution)> {
    let n = prop.dim();
    while *draws < budget {
        *draws += 1;
        let a = draw_probe(n, rng);
        let b = draw_probe(n, rng);
        let (ga, gb) = (prop.eval(&a), prop.eval(&b));
        if ga < r - tol.level && gb > r + tol.level {
            return Some((a, b));
        }
        if gb < r - tol.level && ga > r + tol.level {
            return Some((b, a));
        }
    }
    None
}

fn singular_values_and_basis(rows: &[&[f64]], n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = rows.len().max(n);
    let a = DMatrix::from_fn(m, n, |i, j| rows.get(i).map_or(0.0, |row| row[j]));
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    (svd.singular_values.iter().copied().collect(), v_t)
}

/// Numerical rank with singular values cut at `rel * sigma_max`.
pub fn numerical_rank(rows: &[Vec<f64>], n: usize, rel: f64) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let (sv, _) = singular_values_and_basis(&refs, n);
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= rel * max).count()
}

fn spanning_rank(points: &[Distribution], n: usize, rel: f64) -> usize {
    let Some(base) = points.first() else {
        return 0;
    };
    let diffs: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|p| {
            p.weights()
                .iter()
                .zip(base.weights())
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    numerical_rank(&diffs, n, rel)
}

pub fn sample_level_set(
    prop: &PropertySpec,
    r: f64,
    count: usize,
    seed: u64,
    cfg: &SeparatorConfig,
) -> Result<LevelSample, SeparationError> {
    let tol = &cfg.tol;
    accepted_interval(prop, r, tol)?;
    let n = prop.dim();
    let needed = n - 2;
    let mut target = count.max(n - 1);
    let mut rng = simplex::rng_from_seed(seed);
    let mut points = Vec::with_capacity(target);
    let mut draws = 0;
    loop {
        while points.len() < target {
            match draw_straddling_pair(prop, r, tol, &mut rng, &mut draws, cfg.draw_budget) {
                Some((lo, hi)) => points.push(level_cross(prop, &lo, &hi, r, tol)?),
                None => {
                    return Err(SeparationError::InsufficientSpan {
                        r,
                        rank: spanning_rank(&points, n, tol.rank),
                        needed,
                        draws,
                    })
                }
            }
        }
        let rank = spanning_rank(&points, n, tol.rank);
        if rank >= needed {
            return Ok(LevelSample {
                r,
                points,
                spanning_rank: rank,
            });
        }
        target += n;
    }
}

/// Null vector of the stacked level-set samples.
pub fn null_space_fit(sample: &LevelSample, tol: &Tolerances) -> Result<Vec<f64>, SeparationError> {
    let n = sample
        .points
        .first()
        .map(|p| p.dim())
        .ok_or(SeparationError::RankDeficient { nullity: usize::MAX })?;
    let rows: Vec<&[f64]> = sample.points.iter().map(|p| p.weights()).collect();
    let (sv, v_t) = singular_values_and_basis(&rows, n);
    let max = sv.iter().copied().fold(0.0, f64::max);
    let nullity = sv.iter().filter(|&&s| s < tol.rank * max).count();
    if nullity > 1 {
        return Err(SeparationError::RankDeficient { nullity });
    }
    let (idx, _) = sv
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("n >= 2 singular values");
    Ok(v_t.row(idx).iter().copied().collect())
}

fn find_upper_witness(prop: &PropertySpec, r: f64, seed: u64, cfg: &SeparatorConfig) -> Option<Distribution> {
    let above = |x: &Distribution| prop.eval(x) > r + cfg.tol.level;
    let space = prop.space();
    if let Some(v) = (0..prop.dim()).map(|i| space.vertex(i)).find(above) {
        return Some(v);
    }
    let mut rng = simplex::rng_from_seed(seed);
    (0..cfg.draw_budget)
        .map(|_| draw_probe(prop.dim(), &mut rng))
        .find(above)
}

/// Sign so that `<z, x+> > 0` for a sampled `x+` above the level, then
/// unit dual norm. The residual is measured on `sample`.
pub fn orient_and_normalize(
    z: &[f64],
    prop: &PropertySpec,
    r: f64,
    sample: &LevelSample,
    seed: u64,
    cfg: &SeparatorConfig,
) -> Result<SeparatingFunctional, SeparationError> {
    let witness = find_upper_witness(prop, r, seed, cfg).ok_or(SeparationError::NoUpperWitness { r })?;
    let mut z = simplex::normalize_dual(z, cfg.norm)?;
    if simplex::dot(&z, witness.weights()) < 0.0 {
        z.iter_mut().for_each(|v| *v = -*v);
    }
    let mut f = SeparatingFunctional {
        r,
        z,
        norm: cfg.norm,
        residual: 0.0,
        orientation_witness: witness,
    };
    f.residual = psi_diagnostic(&f, sample);
    Ok(f)
}

/// `sup |<z, x>|` over the level-set sample.
pub fn psi_diagnostic(f: &SeparatingFunctional, sample: &LevelSample) -> f64 {
    sample.points.iter().map(|x| f.apply(x).abs()).fold(0.0, f64::max)
}

pub fn separate(
    prop: &PropertySpec,
    r: f64,
    cfg: &SeparatorConfig,
) -> Result<SeparatingFunctional, SeparationError> {
    let (sample, f) = separate_with_sample(prop, r, cfg)?;
    let _ = sample;
    Ok(f)
}

/// [`separate`], also returning the level-set sample it was fitted on.
pub fn separate_with_sample(
    prop: &PropertySpec,
    r: f64,
    cfg: &SeparatorConfig,
) -> Result<(LevelSample, SeparatingFunctional), SeparationError> {
    let n = prop.dim();
    let sample = sample_level_set(
        prop,
        r,
        cfg.level_count(n),
        simplex::derive_seed(cfg.seed, 0),
        cfg,
    )?;
    let z = null_space_fit(&sample, &cfg.tol)?;
    let f = orient_and_normalize(&z, prop, r, &sample, simplex::derive_seed(cfg.seed, 1), cfg)?;
    if !(f.residual <= cfg.tol.res) {
        return Err(SeparationError::ResidualBreach {
            r,
            residual: f.residual,
            limit: cfg.tol.res,
        });
    }
    Ok((sample, f))
}

/// Checks `sign <z, P> = sign(Gamma(P) - r)` on `trials` random points.
pub fn verify_separation(
    f: &SeparatingFunctional,
    prop: &PropertySpec,
    trials: usize,
    seed: u64,
    tol: &Tolerances,
) -> CheckReport {
    let mut rng = simplex::rng_from_seed(seed);
    let n = prop.dim();
    let mut witness = None;
    let mut checked = 0;
    for k in 0..trials {
        // Corners first: they carry the extreme levels.
        let p = if k < n {
            prop.space().vertex(k)
        } else {
            simplex::sample_uniform(n, &mut rng)
        };
        checked += 1;
        if let Some(w) = sign_violation(f, prop, &p, tol) {
            witness = Some(w);
            break;
        }
    }
    CheckReport {
        condition: Condition::SignStructure,
        verdict: if witness.is_some() {
            Verdict::Fail
        } else {
            Verdict::Pass
        },
        guarantee: Guarantee::Sampled,
        witness,
        trials: checked,
        config: serde_json::json!({ "r": f.r, "trials": trials, "seed": seed }),
        observed: None,
        note: None,
    }
}

fn sign_violation(
    f: &SeparatingFunctional,
    prop: &PropertySpec,
    p: &Distribution,
    tol: &Tolerances,
) -> Option<Witness> {
    let gap = prop.eval(p) - f.r;
    if gap.abs() <= tol.level {
        return None;
    }
    let s = f.apply(p);
    if (s > 0.0) == (gap > 0.0) && s != 0.0 {
        return None;
    }
    let mut params = vec![f.r];
    params.extend_from_slice(&f.z);
    Some(Witness {
        points: vec![p.weights().to_vec()],
        params,
        values: vec![gap + f.r, s],
        seed: None,
        description: format!(
            "Gamma(P) - r = {gap:e} but <z, P> = {s:e}; params = [r, z...], values = [Gamma(P), <z, P>]"
        ),
    })
}
