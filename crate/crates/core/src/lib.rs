//! Numerical toolkit for elicitability of properties on finite outcome
//! spaces.
//!
//! Given a property `Gamma` on the probability simplex, the crate
//!
//! * checks the structural conditions behind the existence of a separating
//!   family (segment monotonicity, convex level sets, local non-constancy,
//!   continuity) and produces replayable counterexamples when they fail,
//! * recovers the unique unit-dual-norm functional `z_r` with
//!   `sign <z_r, P> = sign(Gamma(P) - r)` at each level `r`,
//! * measures how `r -> z_r` varies with the level, and
//! * integrates the family into a consistent scoring function whose expected
//!   score is minimized at `Gamma(P)`.
//!
//! ```
//! use elicit::{properties::PropertySpec, separator::{separate, SeparatorConfig}};
//!
//! let mean = PropertySpec::mean(vec![0.0, 1.0]).unwrap();
//! let f = separate(&mean, 0.25, &SeparatorConfig::default()).unwrap();
//! assert!((f.z[0] + 1.0 / 3.0).abs() < 1e-9 && (f.z[1] - 1.0).abs() < 1e-9);
//! ```

// `!(x > y)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod family;
pub mod properties;
pub mod quasimono;
pub mod report;
pub mod scoring;
pub mod separator;
pub mod simplex;
pub mod tolerance;

pub use family::{build_family, SeparatingFamily};
pub use properties::{ImageInterval, PropertySpec};
pub use separator::{separate, SeparatingFunctional, SeparatorConfig};
pub use simplex::{Distribution, NormSpec, OutcomeSpace};
pub use tolerance::Tolerances;

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    #[test]
    fn fmt17_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, 0.0] {
            let s = super::fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(super::fmt17(0.25), "2.5000000000000000e-1");
    }
}
