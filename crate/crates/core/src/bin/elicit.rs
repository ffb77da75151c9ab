use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use elicit::report::{self, CliError, RunConfig};
use elicit::NormSpec;

#[derive(Parser)]
#[command(
    name = "elicit",
    version,
    about = "Separating families and consistent scoring functions for properties on finite simplices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check quasi-monotonicity, level convexity, G2 and continuity.
    Check(Common),
    /// Compute the separating family (or one level with --level).
    Separate(Common),
    /// Synthesize a scoring function and test its consistency.
    Score(Common),
    /// Replay the witnesses stored in a report.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Report JSON written by `check`, `separate` or `score`.
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Property description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Norm exponent p in [1, inf]; functionals are normalized in the dual norm.
    #[arg(long, default_value = "1", value_parser = parse_exponent)]
    p: f64,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the structural checks before separating or scoring.
    #[arg(long)]
    force: bool,
    #[arg(long, allow_negative_numbers = true)]
    level: Option<f64>,
    /// Negate the separating family before synthesis (negative control).
    #[arg(long)]
    flip_sign: bool,
    /// Points per segment in monotonicity checks.
    #[arg(long, default_value_t = 17)]
    segment_grid: usize,
    /// Fraction of the image interval trimmed at each end.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    tau_level: Option<f64>,
    #[arg(long)]
    tau_res: Option<f64>,
}

fn parse_exponent(s: &str) -> Result<f64, String> {
    let p = match s {
        "inf" | "infinity" | "Inf" => f64::INFINITY,
        _ => s.parse::<f64>().map_err(|e| e.to_string())?,
    };
    NormSpec::new(p).map(|n| n.p()).map_err(|e| e.to_string())
}

impl Common {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let property = report::load_property(&self.spec)?;
        let mut cfg = RunConfig::new(property);
        cfg.norm = NormSpec::new(self.p).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        cfg.grid_size = self.grid;
        cfg.trials = self.trials;
        cfg.seed = self.seed;
        cfg.out_dir = self.out;
        cfg.force = self.force;
        cfg.level = self.level;
        cfg.flip_sign = self.flip_sign;
        cfg.segment_grid = self.segment_grid;
        if let Some(m) = self.margin {
            cfg.tol.margin = m;
        }
        if let Some(t) = self.tau_level {
            cfg.tol.level = t;
        }
        if let Some(t) = self.tau_res {
            cfg.tol.res = t;
        }
        Ok(cfg)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("ELICIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        CliError::ConfigParse(format!(
            "ELICIT_THREADS must be a positive integer, got `{value}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    let code = match cli.command {
        Command::Check(c) => summarize(report::cmd_check(&c.into_config()?)?),
        Command::Separate(c) => summarize(report::cmd_separate(&c.into_config()?)?),
        Command::Score(c) => summarize(report::cmd_score(&c.into_config()?)?),
        Command::Replay { common, report } => {
            let out = report::cmd_replay(&common.into_config()?, &report)?;
            for e in &out.entries {
                println!(
                    "{}: {}",
                    e.check,
                    if e.reproduced {
                        "reproduced"
                    } else {
                        "NOT reproduced"
                    }
                );
            }
            println!(
                "verdict: {}",
                serde_json::to_string(&out.verdict).unwrap_or_default()
            );
            out.verdict.exit_code()
        }
    };
    Ok(code)
}

fn summarize(rep: report::AnalysisReport) -> i32 {
    for c in &rep.conditions {
        println!(
            "{:?}: {:?} ({:?}, {} trials)",
            c.condition, c.verdict, c.guarantee, c.trials
        );
    }
    for e in &rep.errors {
        match e.level {
            Some(r) => println!("error [{} @ r = {r}]: {}", e.stage, e.message),
            None => println!("error [{}]: {}", e.stage, e.message),
        }
    }
    if let Some(f) = &rep.family {
        println!(
            "family: {} levels, max residual {:e}, max jump {:e}",
            f.grid_size, f.max_residual, f.max_jump
        );
    }
    if let Some(c) = &rep.consistency {
        println!(
            "consistency: {}/{} within {} grid steps",
            c.matches, c.trials, c.tolerance_steps
        );
    }
    println!(
        "verdict: {}",
        serde_json::to_string(&rep.verdict).unwrap_or_default()
    );
    rep.exit_code()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                report::EXIT_USAGE as u8
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("elicit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
