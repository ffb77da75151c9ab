//! Separating families over a level grid and their regularity in the level.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::properties::{ImageInterval, PropertyError, PropertySpec};
use crate::separator::{self, SeparatingFunctional, SeparationError, SeparatorConfig};
use crate::simplex::{self, dual_norm, Distribution, NormSpec};

/// Length of the default geometric level sequence.
pub const G5_SEQUENCE_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("grid needs at least 3 levels, got {0}")]
    GridTooSmall(usize),
    #[error("need at least 2 grids for a continuity report, got {0}")]
    TooFewRefinements(usize),
    #[error("level {index} (r = {r}): {source}")]
    AtLevel {
        index: usize,
        r: f64,
        #[source]
        source: SeparationError,
    },
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Property(#[from] PropertyError),
}

impl FamilyError {
    pub fn separation(&self) -> Option<&SeparationError> {
        match self {
            FamilyError::AtLevel { source, .. } | FamilyError::Separation(source) => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparatingFamily {
    pub levels: Vec<f64>,
    pub functionals: Vec<SeparatingFunctional>,
    pub norm: NormSpec,
    /// `||z_{k+1} - z_k||_q` for adjacent levels.
    pub continuity_profile: Vec<f64>,
    prop: PropertySpec,
    config: SeparatorConfig,
}

/// Uniform grid of `size` levels spanning the trimmed interior.
pub fn level_grid(interval: &ImageInterval, margin: f64, size: usize) -> Vec<f64> {
    let (lo, hi) = interval.trimmed(margin);
    (0..size)
        .map(|k| {
            let t = k as f64 / (size - 1) as f64;
            if k + 1 == size {
                hi
            } else {
                lo * (1.0 - t) + hi * t
            }
        })
        .collect()
}

fn jumps(functionals: &[SeparatingFunctional], norm: NormSpec) -> Vec<f64> {
    functionals
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[1].z.iter().zip(&w[0].z).map(|(a, b)| a - b).collect();
            dual_norm(&d, norm)
        })
        .collect()
}

pub fn build_family(
    prop: &PropertySpec,
    grid_size: usize,
    cfg: &SeparatorConfig,
) -> Result<SeparatingFamily, FamilyError> {
    if grid_size < 3 {
        return Err(FamilyError::GridTooSmall(grid_size));
    }
    let interval = prop.image_interval()?;
    let levels = level_grid(&interval, cfg.tol.margin, grid_size);
    family_at_levels(prop, levels, cfg)
}

/// Separating functionals at arbitrary strictly increasing levels.
pub fn family_at_levels(
    prop: &PropertySpec,
    levels: Vec<f64>,
    cfg: &SeparatorConfig,
) -> Result<SeparatingFamily, FamilyError> {
    let results: Vec<Result<SeparatingFunctional, SeparationError>> = levels
        .par_iter()
        .enumerate()
        .map(|(k, &r)| {
            let level_cfg = cfg.with_seed(simplex::derive_seed(cfg.seed, k as u64));
            separator::separate(prop, r, &level_cfg)
        })
        .collect();
    let mut functionals = Vec::with_capacity(levels.len());
    for (index, res) in results.into_iter().enumerate() {
        match res {
            Ok(f) => functionals.push(f),
            Err(source) => {
                return Err(FamilyError::AtLevel {
                    index,
                    r: levels[index],
                    source,
                })
            }
        }
    }
    let continuity_profile = jumps(&functionals, cfg.norm);
    Ok(SeparatingFamily {
        levels,
        functionals,
        norm: cfg.norm,
        continuity_profile,
        prop: prop.clone(),
        config: *cfg,
    })
}

impl SeparatingFamily {
    pub fn property(&self) -> &PropertySpec {
        &self.prop
    }

    pub fn config(&self) -> &SeparatorConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn max_jump(&self) -> f64 {
        self.continuity_profile.iter().copied().fold(0.0, f64::max)
    }

    pub fn step(&self) -> f64 {
        (self.levels[self.len() - 1] - self.levels[0]) / (self.len() - 1) as f64
    }

    /// Every functional with its orientation reversed; a negative control
    /// for downstream consistency checks.
    pub fn negated(&self) -> Self {
        Self {
            functionals: self.functionals.iter().map(|f| f.flipped()).collect(),
            ..self.clone()
        }
    }

    /// CSV with header `r,z_1..z_n,residual,jump_to_next`; numbers at 17
    /// significant digits, `jump_to_next` empty on the last row.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let n = self.prop.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["r".to_string()];
        header.extend((1..=n).map(|i| format!("z_{i}")));
        header.push("residual".into());
        header.push("jump_to_next".into());
        w.write_record(&header)?;
        for (k, f) in self.functionals.iter().enumerate() {
            let mut row = vec![crate::fmt17(f.r)];
            row.extend(f.z.iter().map(|v| crate::fmt17(*v)));
            row.push(crate::fmt17(f.residual));
            row.push(
                self.continuity_profile
                    .get(k)
                    .map_or(String::new(), |j| crate::fmt17(*j)),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> FamilySummary {
        FamilySummary {
            grid_size: self.len(),
            p: self.norm.p(),
            levels: self.levels.clone(),
            residuals: self.functionals.iter().map(|f| f.residual).collect(),
            continuity_profile: self.continuity_profile.clone(),
            max_jump: self.max_jump(),
            max_residual: self.functionals.iter().map(|f| f.residual).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub grid_size: usize,
    pub p: f64,
    pub levels: Vec<f64>,
    pub residuals: Vec<f64>,
    pub continuity_profile: Vec<f64>,
    pub max_jump: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub grid_sizes: Vec<usize>,
    pub steps: Vec<f64>,
    pub max_jumps: Vec<f64>,
    /// Least-squares slope of max jump against step, through the origin.
    pub lipschitz_fit: f64,
    pub strictly_decreasing: bool,
    pub finest_within_bound: bool,
    pub pass: bool,
}

/// Rebuilds the family at `N, 2N, 4N, ...` levels and tracks the largest
/// adjacent jump. Passing needs strictly decreasing jumps with the finest
/// one within twice the fitted Lipschitz bound.
pub fn continuity_report(
    fam: &SeparatingFamily,
    refinements: usize,
) -> Result<ContinuityReport, FamilyError> {
    if refinements < 2 {
        return Err(FamilyError::TooFewRefinements(refinements));
    }
    let mut grid_sizes = Vec::with_capacity(refinements);
    let mut steps = Vec::with_capacity(refinements);
    let mut max_jumps = Vec::with_capacity(refinements);
    let base = fam.len();
    for k in 0..refinements {
        let size = base << k;
        let f = if k == 0 {
            fam.clone()
        } else {
            build_family(&fam.prop, size, &fam.config)?
        };
        grid_sizes.push(size);
        steps.push(f.step());
        max_jumps.push(f.max_jump());
    }
    let num: f64 = steps.iter().zip(&max_jumps).map(|(s, j)| s * j).sum();
    let den: f64 = steps.iter().map(|s| s * s).sum();
    let lipschitz_fit = num / den;
    let strictly_decreasing = max_jumps.windows(2).all(|w| w[1] < w[0]);
    let finest_within_bound = max_jumps[refinements - 1] <= 2.0 * lipschitz_fit * steps[refinements - 1];
    Ok(ContinuityReport {
        grid_sizes,
        steps,
        max_jumps,
        lipschitz_fit,
        strictly_decreasing,
        finest_within_bound,
        pass: strictly_decreasing && finest_within_bound,
    })
}

/// `|<z, x>|`, which for a unit-dual-norm `z` is the `l_p` distance from
/// `x` to the hyperplane `ker z`.
pub fn distance_to_kernel(x: &Distribution, f: &SeparatingFunctional) -> f64 {
    f.apply(x).abs()
}

/// `r +/- (hi - lo) 2^-k` for `k = 1..=len`, clipped to the trimmed interior.
pub fn geometric_sequence(
    interval: &ImageInterval,
    margin: f64,
    r: f64,
    len: usize,
    from_above: bool,
) -> Vec<f64> {
    let (lo, hi) = interval.trimmed(margin);
    let sign = if from_above { 1.0 } else { -1.0 };
    (1..=len)
        .map(|k| (r + sign * interval.width() * 0.5f64.powi(k as i32)).clamp(lo, hi))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G5Report {
    pub r: f64,
    pub x: Vec<f64>,
    pub levels: Vec<f64>,
    pub distances: Vec<f64>,
    pub limit: f64,
    pub gaps: Vec<f64>,
    /// Largest `gap / |r_n - r|` over the first half of the sequence.
    pub lipschitz_estimate: f64,
    pub final_gap: f64,
    pub pass: bool,
}

/// Tracks `d(x, span{Gamma = r_n})` along `sequence_levels -> r`.
///
/// The distance is read off the separating functional: its kernel is the
/// span of the level set, and with unit dual norm the distance is
/// `|<z_{r_n}, x>|`.
pub fn g5_convergence_check(
    prop: &PropertySpec,
    r: f64,
    sequence_levels: &[f64],
    x: &Distribution,
    cfg: &SeparatorConfig,
) -> Result<G5Report, FamilyError> {
    let limit_f = separator::separate(prop, r, cfg)?;
    let limit = distance_to_kernel(x, &limit_f);
    let fam = family_at_levels(prop, sequence_levels.to_vec(), cfg)?;
    let distances: Vec<f64> = fam.functionals.iter().map(|f| distance_to_kernel(x, f)).collect();
    let gaps: Vec<f64> = distances.iter().map(|d| (d - limit).abs()).collect();
    let half = (gaps.len() / 2).max(1);
    let lipschitz_estimate = gaps[..half.min(gaps.len())]
        .iter()
        .zip(sequence_levels)
        .filter(|(_, rn)| **rn != r)
        .map(|(g, rn)| g / (rn - r).abs())
        .fold(0.0, f64::max);
    let final_gap = gaps.last().copied().unwrap_or(0.0);
    let last_step = sequence_levels.last().map_or(0.0, |rn| (rn - r).abs());
    let pass = final_gap <= 10.0 * lipschitz_estimate * last_step + 10.0 * cfg.tol.res;
    Ok(G5Report {
        r,
        x: x.weights().to_vec(),
        levels: sequence_levels.to_vec(),
        distances,
        limit,
        gaps,
        lipschitz_estimate,
        final_gap,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::make_distribution;

    fn d(w: &[f64]) -> Distribution {
        make_distribution(w.to_vec()).unwrap()
    }

    fn mean2() -> PropertySpec {
        PropertySpec::mean(vec![0.0, 1.0]).unwrap()
    }

    fn ratio() -> PropertySpec {
        PropertySpec::ratio(vec![1.0, 2.0, 4.0], vec![1.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn mean_family_matches_closed_form() {
        let fam = build_family(&mean2(), 5, &SeparatorConfig::default()).unwrap();
        assert_eq!(fam.len(), 5);
        for f in &fam.functionals {
            let r = f.r;
            let m = r.max(1.0 - r);
            assert!((f.z[0] + r / m).abs() < 1e-9 && (f.z[1] - (1.0 - r) / m).abs() < 1e-9);
        }
        assert!(fam.levels.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(fam.levels[0], 0.001);
        assert_eq!(fam.levels[4], 0.999);
    }

    #[test]
    fn ratio_family_matches_closed_form() {
        let p = ratio();
        let fam = build_family(&p, 5, &SeparatorConfig::default()).unwrap();
        for f in &fam.functionals {
            let oracle = p.oracle_functional(f.r).unwrap().unwrap();
            let oracle = simplex::normalize_dual(&oracle, NormSpec::l1()).unwrap();
            for (a, b) in f.z.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn variance_fails_at_first_level() {
        let var = PropertySpec::variance(vec![0.0, 1.0, 2.0]).unwrap();
        match build_family(&var, 5, &SeparatorConfig::default()) {
            Err(FamilyError::AtLevel { index, .. }) => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn continuity_examples() {
        let cfg = SeparatorConfig::default();
        for p in [mean2(), ratio()] {
            let fam = build_family(&p, 8, &cfg).unwrap();
            let rep = continuity_report(&fam, 3).unwrap();
            assert!(rep.pass, "{rep:?}");
            let ratio1 = rep.max_jumps[1] / rep.max_jumps[0];
            assert!(ratio1 < 0.6, "{rep:?}");
        }
        let fam = build_family(&mean2(), 8, &cfg).unwrap();
        assert!(matches!(
            continuity_report(&fam, 1),
            Err(FamilyError::TooFewRefinements(1))
        ));
    }

    #[test]
    fn reseeding_keeps_profile() {
        let p = ratio();
        let a = build_family(&p, 9, &SeparatorConfig::default().with_seed(1)).unwrap();
        let b = build_family(&p, 9, &SeparatorConfig::default().with_seed(99)).unwrap();
        for (x, y) in a.continuity_profile.iter().zip(&b.continuity_profile) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn distance_examples() {
        let f = SeparatingFunctional {
            r: 0.5,
            z: vec![-1.0, 1.0],
            norm: NormSpec::l1(),
            residual: 0.0,
            orientation_witness: d(&[0.0, 1.0]),
        };
        assert_eq!(distance_to_kernel(&d(&[0.0, 1.0]), &f), 1.0);
        assert_eq!(distance_to_kernel(&d(&[0.5, 0.5]), &f), 0.0);

        let s = 1.0 / 2f64.sqrt();
        let f2 = SeparatingFunctional {
            z: vec![-s, s],
            norm: NormSpec::l2(),
            ..f
        };
        assert!((distance_to_kernel(&d(&[0.0, 1.0]), &f2) - s).abs() < 1e-15);
    }

    #[test]
    fn g5_examples() {
        let cfg = SeparatorConfig::default();
        let p = mean2();
        let interval = p.image_interval().unwrap();
        let seq = geometric_sequence(&interval, cfg.tol.margin, 0.5, G5_SEQUENCE_LEN, true);
        let rep = g5_convergence_check(&p, 0.5, &seq, &d(&[0.0, 1.0]), &cfg).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!((rep.limit - 1.0).abs() < 1e-9);
        for (rn, dn) in rep.levels.iter().zip(&rep.distances) {
            assert!((dn - (1.0 - rn) / rn.max(1.0 - rn)).abs() < 1e-8);
        }
        assert!(rep.final_gap < 1e-4);

        let rep = g5_convergence_check(&p, 0.5, &seq, &d(&[0.5, 0.5]), &cfg).unwrap();
        assert!(rep.limit < 1e-12);
        assert!(rep.final_gap < 1e-4);

        let q = ratio();
        let interval = q.image_interval().unwrap();
        let seq = geometric_sequence(&interval, cfg.tol.margin, 1.3, G5_SEQUENCE_LEN, false);
        let rep = g5_convergence_check(&q, 1.3, &seq, &d(&[0.2, 0.5, 0.3]), &cfg).unwrap();
        assert!(rep.pass && rep.final_gap < 1e-4, "{rep:?}");
    }

    #[test]
    fn csv_layout() {
        let fam = build_family(&mean2(), 3, &SeparatorConfig::default()).unwrap();
        let mut buf = Vec::new();
        fam.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "r,z_1,z_2,residual,jump_to_next");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1.0000000000000000e-3,"));
        assert!(lines[3].ends_with(','));
    }
}
