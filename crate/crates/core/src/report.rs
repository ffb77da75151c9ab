//! Pipeline orchestration behind the `elicit` command line: conditions,
//! separation, scoring and witness replay, with JSON/CSV outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::family::{self, ContinuityReport, FamilySummary, SeparatingFamily};
use crate::properties::{PropertyError, PropertySpec};
use crate::quasimono::{self, CheckReport, Verdict};
use crate::scoring::{self, ConsistencyReport, FirstOrderReport, ScoringRule, Weight};
use crate::separator::{self, SeparationError, SeparatorConfig};
use crate::simplex::{self, NormSpec};
use crate::tolerance::Tolerances;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_REFUTED: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

/// Levels (as fractions of the trimmed interior) probed for level convexity.
const CONVEXITY_LEVELS: [f64; 3] = [0.25, 0.5, 0.75];
const CONVEXITY_PAIRS: usize = 20;
const G2_POINTS: usize = 20;
const G2_RADIUS: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("range: {0}")]
    Range(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse(_) | CliError::Range(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<PropertyError> for CliError {
    fn from(e: PropertyError) -> Self {
        match e {
            PropertyError::LevelOutOfRange { .. } => CliError::Range(e.to_string()),
            _ => CliError::ConfigParse(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub property: PropertySpec,
    pub norm: NormSpec,
    pub grid_size: usize,
    pub trials: usize,
    /// Points per segment in monotonicity checks.
    pub segment_grid: usize,
    pub seed: u64,
    pub tol: Tolerances,
    pub out_dir: Option<PathBuf>,
    pub force: bool,
    pub level: Option<f64>,
    pub flip_sign: bool,
}

impl RunConfig {
    pub fn new(property: PropertySpec) -> Self {
        Self {
            property,
            norm: NormSpec::default(),
            grid_size: 64,
            trials: quasimono::DEFAULT_TRIALS,
            segment_grid: quasimono::DEFAULT_GRID,
            seed: 42,
            tol: Tolerances::default(),
            out_dir: None,
            force: false,
            level: None,
            flip_sign: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.tol.validate().map_err(CliError::ConfigParse)?;
        if self.grid_size < 3 {
            return Err(CliError::ConfigParse(format!(
                "--grid must be at least 3, got {}",
                self.grid_size
            )));
        }
        if self.trials == 0 {
            return Err(CliError::ConfigParse("--trials must be positive".into()));
        }
        Ok(())
    }

    fn separator(&self) -> SeparatorConfig {
        SeparatorConfig {
            norm: self.norm,
            seed: self.seed,
            tol: self.tol,
            ..SeparatorConfig::default()
        }
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "p": if self.norm.p().is_infinite() {
                serde_json::json!("inf")
            } else {
                serde_json::json!(self.norm.p())
            },
            "grid": self.grid_size,
            "trials": self.trials,
            "segment_grid": self.segment_grid,
            "seed": self.seed,
            "tolerances": self.tol,
            "force": self.force,
            "level": self.level,
            "flip_sign": self.flip_sign,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverallVerdict {
    ElicitableEvidence,
    Refuted,
    Inconclusive,
}

impl OverallVerdict {
    pub fn exit_code(self) -> i32 {
        match self {
            OverallVerdict::ElicitableEvidence => EXIT_PASS,
            OverallVerdict::Refuted => EXIT_REFUTED,
            OverallVerdict::Inconclusive => EXIT_INCONCLUSIVE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub level: Option<f64>,
    pub message: String,
    pub signaled_condition: Option<String>,
}

impl StageError {
    fn from_separation(stage: &str, level: Option<f64>, e: &SeparationError) -> Self {
        Self {
            stage: stage.into(),
            level,
            message: e.to_string(),
            signaled_condition: e.signaled_condition().map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSummary {
    pub levels_checked: usize,
    pub trials_per_level: usize,
    pub failures: Vec<CheckReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub command: String,
    pub property: serde_json::Value,
    pub config: serde_json::Value,
    pub conditions: Vec<CheckReport>,
    pub errors: Vec<StageError>,
    pub family: Option<FamilySummary>,
    pub continuity: Option<ContinuityReport>,
    pub sign_structure: Option<SignSummary>,
    pub consistency: Option<ConsistencyReport>,
    pub first_order: Option<FirstOrderReport>,
    pub verdict: OverallVerdict,
}

impl AnalysisReport {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.into(),
            property: cfg.property.to_json(),
            config: cfg.echo(),
            conditions: Vec::new(),
            errors: Vec::new(),
            family: None,
            continuity: None,
            sign_structure: None,
            consistency: None,
            first_order: None,
            verdict: OverallVerdict::Inconclusive,
        }
    }

    fn conditions_verdict(&self) -> OverallVerdict {
        if self.conditions.iter().any(|c| c.verdict == Verdict::Fail) {
            OverallVerdict::Refuted
        } else if !self.errors.is_empty() {
            OverallVerdict::Inconclusive
        } else {
            OverallVerdict::ElicitableEvidence
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict.exit_code()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

/// Runs every structural check.
pub fn cmd_check(cfg: &RunConfig) -> Result<AnalysisReport, CliError> {
    cfg.validate()?;
    let prop = &cfg.property;
    let tol = &cfg.tol;
    let mut report = AnalysisReport::new("check", cfg);
    let seed = |k: u64| simplex::derive_seed(cfg.seed, k);

    report.conditions.push(
        quasimono::check_quasi_monotone(prop, cfg.trials, cfg.segment_grid, seed(0), tol)
            .map_err(internal)?,
    );
    report.conditions.push(
        quasimono::check_strict_quasi_monotone(prop, cfg.trials, cfg.segment_grid, seed(1), tol)
            .map_err(internal)?,
    );
    let interval = prop.image_interval()?;
    let (lo, hi) = interval.trimmed(tol.margin);
    for (k, frac) in CONVEXITY_LEVELS.iter().enumerate() {
        let r = lo + frac * (hi - lo);
        match quasimono::check_level_convexity(prop, r, CONVEXITY_PAIRS, seed(10 + k as u64), tol) {
            Ok(rep) => report.conditions.push(rep),
            Err(quasimono::CheckError::Separation(e)) => {
                report
                    .errors
                    .push(StageError::from_separation("level_convexity", Some(r), &e))
            }
            Err(e) => return Err(internal(e)),
        }
    }
    report.conditions.push(
        quasimono::check_g2_sampled(prop, G2_POINTS, G2_RADIUS, seed(2), cfg.norm, tol).map_err(internal)?,
    );
    report.conditions.push(quasimono::check_continuity(
        prop,
        cfg.trials,
        seed(3),
        cfg.norm,
        tol,
    ));
    report.verdict = report.conditions_verdict();
    write_json(cfg, "check_report.json", &report)?;
    Ok(report)
}

fn gate(cfg: &RunConfig, command: &str) -> Result<Option<AnalysisReport>, CliError> {
    if cfg.force {
        return Ok(None);
    }
    let mut check = cmd_check(&RunConfig {
        out_dir: None,
        ..cfg.clone()
    })?;
    if check.verdict == OverallVerdict::ElicitableEvidence {
        return Ok(None);
    }
    check.command = command.into();
    check.errors.push(StageError {
        stage: "gate".into(),
        level: None,
        message: "structural checks did not pass; rerun with --force to separate anyway".into(),
        signaled_condition: None,
    });
    Ok(Some(check))
}

fn build_or_report(
    cfg: &RunConfig,
    report: &mut AnalysisReport,
) -> Result<Option<SeparatingFamily>, CliError> {
    let sep = cfg.separator();
    let built = match cfg.level {
        Some(r) => {
            separator::accepted_interval(&cfg.property, r, &cfg.tol)
                .map_err(|e| CliError::Range(e.to_string()))?;
            family::family_at_levels(&cfg.property, vec![r], &sep)
        }
        None => family::build_family(&cfg.property, cfg.grid_size, &sep),
    };
    match built {
        Ok(f) => Ok(Some(f)),
        Err(e) => match e.separation() {
            Some(s) if s.is_range_error() => Err(CliError::Range(e.to_string())),
            Some(s) => {
                let level = match &e {
                    family::FamilyError::AtLevel { r, .. } => Some(*r),
                    _ => None,
                };
                report
                    .errors
                    .push(StageError::from_separation("separate", level, s));
                report.verdict = OverallVerdict::Inconclusive;
                Ok(None)
            }
            None => Err(internal(e)),
        },
    }
}

fn sign_summary(fam: &SeparatingFamily, cfg: &RunConfig) -> SignSummary {
    let failures = fam
        .functionals
        .iter()
        .enumerate()
        .map(|(k, f)| {
            separator::verify_separation(
                f,
                &cfg.property,
                cfg.trials,
                simplex::derive_seed(cfg.seed ^ 0x5157, k as u64),
                &cfg.tol,
            )
        })
        .filter(|r| !r.passed())
        .collect();
    SignSummary {
        levels_checked: fam.len(),
        trials_per_level: cfg.trials,
        failures,
    }
}

/// Builds the separating family (or a single level) and writes
/// `family.csv` plus `separate_report.json`.
pub fn cmd_separate(cfg: &RunConfig) -> Result<AnalysisReport, CliError> {
    cfg.validate()?;
    if let Some(gated) = gate(cfg, "separate")? {
        write_json(cfg, "separate_report.json", &gated)?;
        return Ok(gated);
    }
    let mut report = AnalysisReport::new("separate", cfg);
    let Some(fam) = build_or_report(cfg, &mut report)? else {
        write_json(cfg, "separate_report.json", &report)?;
        return Ok(report);
    };
    report.family = Some(fam.summary());
    let signs = sign_summary(&fam, cfg);
    report.verdict = if signs.failures.is_empty() {
        OverallVerdict::ElicitableEvidence
    } else {
        OverallVerdict::Refuted
    };
    report.conditions.extend(signs.failures.iter().cloned());
    report.sign_structure = Some(signs);
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fam.write_csv(fs::File::create(dir.join("family.csv"))?)?;
    }
    write_json(cfg, "separate_report.json", &report)?;
    Ok(report)
}

/// Synthesizes the scoring rule, checks its consistency and writes
/// `scoring.csv`, `scoring.json` and `score_report.json`.
pub fn cmd_score(cfg: &RunConfig) -> Result<AnalysisReport, CliError> {
    cfg.validate()?;
    if let Some(gated) = gate(cfg, "score")? {
        write_json(cfg, "score_report.json", &gated)?;
        return Ok(gated);
    }
    let mut report = AnalysisReport::new("score", cfg);
    let cfg_grid = RunConfig {
        level: None,
        ..cfg.clone()
    };
    let Some(fam) = build_or_report(&cfg_grid, &mut report)? else {
        write_json(cfg, "score_report.json", &report)?;
        return Ok(report);
    };
    report.family = Some(fam.summary());
    let fam = if cfg.flip_sign { fam.negated() } else { fam };
    let rule = scoring::synthesize(&fam, &Weight::default(), None).map_err(internal)?;
    let consistency = scoring::consistency_check(
        &rule,
        &cfg.property,
        cfg.trials,
        simplex::derive_seed(cfg.seed, 77),
    );
    if rule.levels.len() >= 5 {
        report.first_order = Some(
            scoring::first_order_check(
                &rule,
                &fam,
                &cfg.property,
                cfg.trials,
                simplex::derive_seed(cfg.seed, 78),
            )
            .map_err(internal)?,
        );
    }
    report.verdict = if consistency.all_match() {
        OverallVerdict::ElicitableEvidence
    } else if consistency.trials == 0 {
        OverallVerdict::Inconclusive
    } else {
        OverallVerdict::Refuted
    };
    report.consistency = Some(consistency);
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        rule.write_csv(fs::File::create(dir.join("scoring.csv"))?)?;
        fs::write(
            dir.join("scoring.json"),
            serde_json::to_string_pretty(&rule).map_err(internal)? + "\n",
        )?;
    }
    write_json(cfg, "score_report.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    /// Condition name, or `Consistency` for a recorded scoring failure.
    pub check: String,
    pub reproduced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub source: String,
    pub entries: Vec<ReplayEntry>,
    pub verdict: OverallVerdict,
}

/// Re-evaluates every witness in a previously written report. Consistency
/// failures from `score` are re-checked against the `scoring.json` written
/// next to the report.
pub fn cmd_replay(cfg: &RunConfig, report_path: &Path) -> Result<ReplayReport, CliError> {
    let text = fs::read_to_string(report_path)?;
    let source: AnalysisReport = serde_json::from_str(&text).map_err(|e| {
        CliError::ConfigParse(format!(
            "{}: line {}, column {}: {e}",
            report_path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let mut entries: Vec<ReplayEntry> = source
        .conditions
        .iter()
        .filter_map(|c| c.witness.as_ref().map(|w| (c.condition, w)))
        .map(|(condition, w)| ReplayEntry {
            check: format!("{condition:?}"),
            reproduced: quasimono::replay_witness(&cfg.property, condition, w, &cfg.tol),
        })
        .collect();
    if let Some(failures) = source
        .consistency
        .as_ref()
        .map(|c| &c.failures)
        .filter(|f| !f.is_empty())
    {
        let rule_path = report_path.with_file_name("scoring.json");
        let rule: ScoringRule = serde_json::from_str(&fs::read_to_string(&rule_path)?)
            .map_err(|e| CliError::ConfigParse(format!("{}: {e}", rule_path.display())))?;
        let band = scoring::CONSISTENCY_STEPS * rule.step();
        for f in failures {
            let reproduced = simplex::make_distribution_with(f.p.clone(), cfg.tol.sum)
                .ok()
                .filter(|p| {
                    p.dim() == cfg.property.dim() && rule.table.first().map(Vec::len) == Some(p.dim())
                })
                .is_some_and(|p| (rule.levels[rule.argmin(&p)] - cfg.property.eval(&p)).abs() > band);
            entries.push(ReplayEntry {
                check: "Consistency".into(),
                reproduced,
            });
        }
    }
    let verdict = if entries.is_empty() {
        OverallVerdict::Inconclusive
    } else if entries.iter().all(|e| e.reproduced) {
        OverallVerdict::Refuted
    } else {
        OverallVerdict::Inconclusive
    };
    let out = ReplayReport {
        source: report_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        entries,
        verdict,
    };
    write_json(cfg, "replay_report.json", &out)?;
    Ok(out)
}

fn write_json<T: Serialize>(cfg: &RunConfig, name: &str, value: &T) -> Result<(), CliError> {
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(value).map_err(internal)?;
        fs::write(dir.join(name), text + "\n")?;
    }
    Ok(())
}

/// Reads a property description, reporting JSON errors with their position.
pub fn load_property(path: &Path) -> Result<PropertySpec, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
    PropertySpec::from_json(&text).map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quasimono::Condition;

    fn cfg(json: &str) -> RunConfig {
        let mut c = RunConfig::new(PropertySpec::from_json(json).unwrap());
        c.trials = 100;
        c
    }

    #[test]
    fn check_verdicts() {
        let mean = cmd_check(&cfg(r#"{"kind":"mean","values":[0,1,2]}"#)).unwrap();
        assert_eq!(mean.exit_code(), EXIT_PASS, "{}", mean.to_json_pretty());

        let var = cmd_check(&cfg(r#"{"kind":"variance","values":[0,1,2]}"#)).unwrap();
        assert_eq!(var.exit_code(), EXIT_REFUTED);
        assert!(var
            .conditions
            .iter()
            .any(|c| c.condition == Condition::SegmentMonotone && c.witness.is_some()));

        let q = cmd_check(&cfg(r#"{"kind":"quantile","alpha":0.5,"values":[1,2,3]}"#)).unwrap();
        assert_eq!(q.exit_code(), EXIT_REFUTED);
    }

    #[test]
    fn separate_range_error_is_usage() {
        let mut c = cfg(r#"{"kind":"mean","values":[0,1]}"#);
        c.force = true;
        c.level = Some(1.5);
        let err = cmd_separate(&c).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn separate_variance_is_gated() {
        let c = cfg(r#"{"kind":"variance","values":[0,1,2]}"#);
        let rep = cmd_separate(&c).unwrap();
        assert_eq!(rep.exit_code(), EXIT_REFUTED);
        assert!(rep.family.is_none());

        let mut forced = c.clone();
        forced.force = true;
        forced.grid_size = 5;
        let rep = cmd_separate(&forced).unwrap();
        assert_ne!(rep.exit_code(), EXIT_PASS);
        assert!(!rep.errors.is_empty());
    }

    #[test]
    fn score_and_flip() {
        let mut c = cfg(r#"{"kind":"expectile","tau":0.7,"values":[0,1,2]}"#);
        c.force = true;
        let rep = cmd_score(&c).unwrap();
        assert_eq!(rep.exit_code(), EXIT_PASS);
        c.flip_sign = true;
        let rep = cmd_score(&c).unwrap();
        assert_eq!(rep.exit_code(), EXIT_REFUTED);
        assert_eq!(rep.consistency.unwrap().matches, 0);
    }

    #[test]
    fn bad_config_is_usage_error() {
        let mut c = cfg(r#"{"kind":"mean","values":[0,1]}"#);
        c.grid_size = 2;
        assert_eq!(cmd_check(&c).unwrap_err().exit_code(), EXIT_USAGE);
        c.grid_size = 8;
        c.tol.level = -1.0;
        assert_eq!(cmd_check(&c).unwrap_err().exit_code(), EXIT_USAGE);
    }
}
