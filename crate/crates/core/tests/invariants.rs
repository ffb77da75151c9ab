use proptest::prelude::*;

use elicit::properties::PropertySpec;
use elicit::separator::{self, SeparationError, SeparatorConfig};
use elicit::simplex::{self, NormSpec, OutcomeSpace};
use elicit::{build_family, Tolerances};

fn labels(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
        .prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v
        })
        .prop_filter("distinct labels", |v| v.windows(2).all(|w| w[1] - w[0] > 0.05))
}

fn norm() -> impl Strategy<Value = NormSpec> {
    prop_oneof![Just(NormSpec::l1()), Just(NormSpec::l2()), Just(NormSpec::linf())]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mean_functional_is_unique_and_matches_oracle(
        y in (2usize..=6).prop_flat_map(labels),
        t in 0.05f64..0.95,
        norm in norm(),
        seeds in (any::<u64>(), any::<u64>()),
    ) {
        let prop = PropertySpec::mean(y).unwrap();
        let i = prop.image_interval().unwrap();
        let r = i.lo + t * i.width();
        let a = separator::separate(&prop, r, &SeparatorConfig::default().with_norm(norm).with_seed(seeds.0)).unwrap();
        let b = separator::separate(&prop, r, &SeparatorConfig::default().with_norm(norm).with_seed(seeds.1)).unwrap();
        let oracle = simplex::normalize_dual(&prop.oracle_functional(r).unwrap().unwrap(), norm).unwrap();
        prop_assert!(max_abs_diff(&a.z, &oracle) <= 1e-6);
        prop_assert!(max_abs_diff(&a.z, &b.z) <= 1e-6);
        prop_assert!((simplex::dual_norm(&a.z, norm) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn affine_reparametrization_maps_levels(
        y in (3usize..=5).prop_flat_map(labels),
        t in 0.05f64..0.95,
        norm in norm(),
    ) {
        // Gamma' = 2 Gamma + 3 has the same level sets, so z'_{2r+3} = z_r.
        let n = y.len();
        let base = PropertySpec::expectile(0.4, y).unwrap();
        let inner = base.clone();
        let scaled = PropertySpec::custom("2g+3", OutcomeSpace::new(n).unwrap(), move |w| 2.0 * inner.eval_weights(w) + 3.0);
        let i = base.image_interval().unwrap();
        let r = i.lo + t * i.width();
        let cfg = SeparatorConfig::default().with_norm(norm).with_seed(5);
        let a = separator::separate(&base, r, &cfg).unwrap();
        let b = separator::separate(&scaled, 2.0 * r + 3.0, &cfg).unwrap();
        prop_assert!(max_abs_diff(&a.z, &b.z) <= 1e-6, "{:?} vs {:?}", a.z, b.z);
    }

    #[test]
    fn decreasing_reparametrization_flips_orientation(
        y in (2usize..=5).prop_flat_map(labels),
        t in 0.05f64..0.95,
    ) {
        let n = y.len();
        let base = PropertySpec::mean(y).unwrap();
        let inner = base.clone();
        let neg = PropertySpec::custom("-g", OutcomeSpace::new(n).unwrap(), move |w| -inner.eval_weights(w));
        let i = base.image_interval().unwrap();
        let r = i.lo + t * i.width();
        let cfg = SeparatorConfig::default();
        let a = separator::separate(&base, r, &cfg).unwrap();
        let b = separator::separate(&neg, -r, &cfg).unwrap();
        let flipped: Vec<f64> = a.z.iter().map(|v| -v).collect();
        prop_assert!(max_abs_diff(&flipped, &b.z) <= 1e-6);
    }

    #[test]
    fn ratio_sign_law_on_random_points(
        num in prop::collection::vec(-3.0f64..3.0, 4),
        den in prop::collection::vec(0.2f64..3.0, 4),
        t in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let prop = PropertySpec::ratio(num, den).unwrap();
        let i = prop.image_interval().unwrap();
        prop_assume!(i.width() > 1e-3);
        let r = i.lo + t * i.width();
        let f = separator::separate(&prop, r, &SeparatorConfig::default().with_seed(seed)).unwrap();
        let rep = separator::verify_separation(&f, &prop, 300, seed, &Tolerances::default());
        prop_assert!(rep.passed(), "{:?}", rep.witness);
    }
}

#[test]
fn levels_outside_the_margin_are_rejected() {
    let prop = PropertySpec::mean(vec![0.0, 1.0]).unwrap();
    let cfg = SeparatorConfig::default();
    for r in [-0.5, 0.0, 5e-4, 1.0 - 5e-4, 1.0, 2.0] {
        let err = separator::separate(&prop, r, &cfg).unwrap_err();
        assert!(err.is_range_error(), "r = {r}: {err}");
    }
    assert!(separator::separate(&prop, 2e-3, &cfg).is_ok());
}

#[test]
fn variance_level_set_is_not_a_hyperplane() {
    let prop = PropertySpec::variance(vec![0.0, 1.0, 2.0]).unwrap();
    let err = separator::separate(&prop, 0.3, &SeparatorConfig::default()).unwrap_err();
    assert!(
        matches!(
            err,
            SeparationError::ResidualBreach { .. } | SeparationError::RankDeficient { .. }
        ),
        "{err}"
    );
    assert!(err.signaled_condition().is_some());
}

#[test]
fn quantile_is_not_separable() {
    let prop = PropertySpec::quantile(0.5, vec![0.0, 1.0, 2.0]).unwrap();
    let err = separator::separate(&prop, 0.7, &SeparatorConfig::default()).unwrap_err();
    assert!(err.signaled_condition().is_some(), "{err}");
}

#[test]
fn family_is_identical_across_thread_pools() {
    let prop = PropertySpec::expectile(0.3, vec![-1.0, 0.5, 2.0, 4.0]).unwrap();
    let cfg = SeparatorConfig::default().with_norm(NormSpec::l2()).with_seed(13);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_family(&prop, 40, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(6));
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}
