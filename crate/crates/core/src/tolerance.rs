use serde::{Deserialize, Serialize};

/// Numerical tolerances shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Coordinate-sum slack accepted for simplex points.
    pub sum: f64,
    /// Slack on unit dual norms.
    pub norm: f64,
    /// Band within which two property values count as the same level.
    pub level: f64,
    /// Largest admissible `|<z, x>|` over level-set samples.
    pub res: f64,
    /// Relative singular-value cutoff for numerical rank.
    pub rank: f64,
    /// Fraction of the image interval trimmed at each end.
    pub margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sum: 1e-9,
            norm: 1e-12,
            level: 1e-8,
            res: 1e-7,
            rank: 1e-9,
            margin: 1e-3,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("sum", self.sum),
            ("norm", self.norm),
            ("level", self.level),
            ("res", self.res),
            ("rank", self.rank),
            ("margin", self.margin),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("tolerance `{name}` must be positive, got {v}"));
            }
        }
        if self.margin >= 0.5 {
            return Err(format!("interior margin {} leaves no interior", self.margin));
        }
        Ok(())
    }
}
