mod common;

use hs_hierarchy::enskog::{series_sums, RegularizationPolicy};
use hs_hierarchy::hierarchy::{bbgky_rhs, probe_observables, Scenario};
use hs_hierarchy::scenarios::{build_two_sphere, build_two_sphere_with_spectator};
use proptest::prelude::*;

fn assert_term_by_term(s: &Scenario) {
    let eta = 1e-3 * s.horizon;
    for phi in probe_observables(s, 1, 3).unwrap() {
        let (_, ledger) = bbgky_rhs(s, 1, &phi, s.n() - 1).unwrap();
        let e = series_sums(s, &phi, RegularizationPolicy::TimeSeparation { eta }, s.n() - 1).unwrap();
        let b = ledger.per_n();
        assert_eq!(e.per_n.len(), b.len());
        for (n, (x, y)) in e.per_n.iter().zip(&b).enumerate() {
            assert!((x - y).abs() <= 1e-12, "order {n}: enskog {x} vs bbgky {y}");
        }
    }
}

#[test]
fn single_interval_enskog_matches_bbgky_term_by_term() {
    assert_term_by_term(&build_two_sphere(1.0, 1.0, 0.3, 1.0).unwrap());
    assert_term_by_term(&build_two_sphere_with_spectator(1.0, 1.0, 0.3, 1.0).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn two_sphere_family_matches_bbgky(gap in 0.2f64..3.0, speed in 0.5f64..2.0, b in -0.8f64..0.8) {
        assert_term_by_term(&build_two_sphere(gap, speed, b, 1.0).unwrap());
    }
}

#[test]
fn symmetric_policy_differs_from_time_separation() {
    let s = build_two_sphere(1.0, 1.0, 0.3, 1.0).unwrap();
    let phi = probe_observables(&s, 1, 1).unwrap().remove(0);
    let sym = series_sums(&s, &phi, RegularizationPolicy::Symmetric { delta: 1e-4 }, 2).unwrap();
    let sep = series_sums(&s, &phi, RegularizationPolicy::TimeSeparation { eta: 1e-3 * s.horizon }, 2).unwrap();
    // each of the two order-2 contraction terms carries -1/2 of the target
    assert!((sep.value() - sym.value() - sep.target).abs() <= 1e-3 * sep.target);
    assert!(series_sums(&s, &phi, RegularizationPolicy::None, 2).is_err());
}
